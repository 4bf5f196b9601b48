//! Recurrent integration over routed capsules and the two-class output.

use rand::Rng;

use crate::ingest::SampleRecord;
use crate::model::Model;
use crate::numerics::{Mode, ParamId, ParamStore, Real, Tape, Var};
use crate::{Error, Result};

pub const RNN_WX: &str = "head.rnn.wx";
pub const RNN_WH: &str = "head.rnn.wh";
pub const RNN_B: &str = "head.rnn.b";
pub const FC_W: &str = "head.fc.w";
pub const FC_B: &str = "head.fc.b";
pub const OUT_W: &str = "head.out.w";
pub const OUT_B: &str = "head.out.b";

pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub hidden: usize,
    pub dropout: f64,
}

impl HeadParams {
    /// `capsule_dim` is the routed capsule width, `pooled_dim` the width of
    /// the pooled vector joined at the dense layer.
    pub fn bind<T: Real>(
        store: &ParamStore<T>,
        capsule_dim: usize,
        hidden: usize,
        pooled_dim: usize,
        fc_units: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            wx: store.expect(RNN_WX, &[capsule_dim, hidden])?,
            wh: store.expect(RNN_WH, &[hidden, hidden])?,
            b: store.expect(RNN_B, &[hidden])?,
            w1: store.expect(FC_W, &[hidden + pooled_dim, fc_units])?,
            b1: store.expect(FC_B, &[fc_units])?,
            w2: store.expect(OUT_W, &[fc_units, CLASSES])?,
            b2: store.expect(OUT_B, &[CLASSES])?,
            hidden,
            dropout,
        })
    }
}

/// Elman recurrence over the rows of `caps` (`[K, d]`) from a zero state;
/// returns the last hidden state.
pub fn rnn_integrate<T: Real>(tape: &mut Tape<'_, T>, caps: Var, p: &HeadParams) -> Result<Var> {
    let steps = match tape.shape(caps) {
        [k, _] if *k > 0 => *k,
        s => return Err(Error::dim(format!("recurrence over capsules of shape {s:?}"))),
    };
    let (wx, wh, b) = (tape.param(p.wx), tape.param(p.wh), tape.param(p.b));
    let mut h: Option<Var> = None;
    for t in 0..steps {
        let x = tape.row(caps, t)?;
        let mut pre = tape.affine(x, wx, b)?;
        if let Some(prev) = h {
            let rec = tape.matmul(prev, wh)?;
            pre = tape.add(pre, rec)?;
        }
        h = Some(tape.tanh(pre)?);
    }
    Ok(h.expect("at least one step"))
}

/// Class probabilities from routed capsules and the pooled vector `f`.
pub fn predict<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    caps: Var,
    f: Var,
    p: &HeadParams,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let h = rnn_integrate(tape, caps, p)?;
    let u = tape.concat(&[h, f])?;
    let (w1, b1) = (tape.param(p.w1), tape.param(p.b1));
    let a = tape.affine(u, w1, b1)?;
    let a = tape.relu(a)?;
    let a = tape.dropout(a, p.dropout, mode, rng)?;
    let (w2, b2) = (tape.param(p.w2), tape.param(p.b2));
    let logits = tape.affine(a, w2, b2)?;
    tape.softmax_rows(logits)
}

/// Argmax over the two classes; exact ties go to class 0.
pub fn argmax_label<T: Real>(probs: &[T]) -> u8 {
    u8::from(probs[1] > probs[0])
}

/// Eval-mode prediction for one record: `(label, probabilities)`.
pub fn predict_sentiment<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    record: &SampleRecord,
) -> Result<(u8, [f64; 2])> {
    let mut tape = Tape::new(store);
    let out = model.forward(&mut tape, record, Mode::Eval, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    let p = tape.data(out.probs);
    Ok((argmax_label(p), [p[0].to_f64_lossy(), p[1].to_f64_lossy()]))
}
