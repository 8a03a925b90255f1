use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Bound LSTM weights. Gate order along the `4 * hidden` axis is input,
/// forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `[d_in, 4 * hidden]`
    pub w_ih: Var,
    /// `[hidden, 4 * hidden]`
    pub w_hh: Var,
    /// `[4 * hidden]`
    pub bias: Var,
}

/// Output of [`lstm_forward`].
#[derive(Clone, Copy, Debug)]
pub struct LstmOutput {
    /// `[frames, hidden]`
    pub hidden_states: Var,
    /// `[1, hidden]`
    pub last_hidden: Var,
}

/// Runs a single-layer unidirectional LSTM over the rows of `x`.
///
/// `h0` and `c0` are `[1, hidden]`.
pub fn lstm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: LstmVars,
    h0: Var,
    c0: Var,
) -> Result<LstmOutput> {
    let xs = tape.value(x).shape().to_vec();
    let ws = tape.value(w.w_ih).shape().to_vec();
    let hs = tape.value(w.w_hh).shape().to_vec();
    let [frames, d_in] = xs[..] else {
        return Err(Error::dim("lstm_forward", format!("input shape {xs:?}")));
    };
    let [wd, four_h] = ws[..] else {
        return Err(Error::dim("lstm_forward", format!("w_ih shape {ws:?}")));
    };
    if wd != d_in || four_h % 4 != 0 {
        return Err(Error::dim(
            "lstm_forward",
            format!("input [{frames}, {d_in}] vs w_ih {ws:?}"),
        ));
    }
    let hidden = four_h / 4;
    if hs != [hidden, four_h] || tape.value(w.bias).len() != four_h {
        return Err(Error::dim(
            "lstm_forward",
            format!("w_hh {hs:?} / bias {:?} for hidden {hidden}", tape.value(w.bias).shape()),
        ));
    }
    for (name, v) in [("h0", h0), ("c0", c0)] {
        if tape.value(v).shape() != [1, hidden] {
            return Err(Error::dim(
                "lstm_forward",
                format!("{name} shape {:?}, expected [1, {hidden}]", tape.value(v).shape()),
            ));
        }
    }

    let xw = tape.matmul(x, w.w_ih)?;
    let xw = tape.add_row_vector(xw, w.bias)?;
    let mut h = h0;
    let mut c = c0;
    let mut states = Vec::with_capacity(frames);
    for t in 0..frames {
        let xt = tape.slice_rows(xw, t, 1)?;
        let hw = tape.matmul(h, w.w_hh)?;
        let z = tape.add(xt, hw)?;
        let zi = tape.slice_cols(z, 0, hidden)?;
        let zf = tape.slice_cols(z, hidden, hidden)?;
        let zg = tape.slice_cols(z, 2 * hidden, hidden)?;
        let zo = tape.slice_cols(z, 3 * hidden, hidden)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        h = tape.mul(o, tc)?;
        states.push(h);
    }
    let hidden_states = tape.concat_rows(&states)?;
    Ok(LstmOutput {
        hidden_states,
        last_hidden: h,
    })
}
