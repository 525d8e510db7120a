//! The nine classification heads. Each is linear, GELU, dropout, linear; the
//! status heads see the six binary slot features after the first layer.

use ndarray::Array2;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::context::BinaryFeatures;
use crate::error::Result;
use crate::model::encoder::{add_linear, dropout, linear, Linear};
use crate::scalar::{c, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct Head {
    pub first: Linear,
    pub second: Linear,
    pub binary: bool,
}

impl Head {
    #[allow(clippy::too_many_arguments)]
    fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        out: usize,
        binary: bool,
        std: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let extra = if binary { BinaryFeatures::DIM } else { 0 };
        Head {
            first: add_linear(store, &format!("heads.{name}.0"), input, hidden, std, rng),
            second: add_linear(store, &format!("heads.{name}.1"), hidden + extra, out, std, rng),
            binary,
        }
    }

    /// `x`: `[n, input]`; `features`: `[n, 6]` when the head takes them.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<'_, F>,
        x: Var,
        features: Option<&Array2<F>>,
        p: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let h = linear(tape, x, self.first)?;
        let h = tape.gelu(h);
        let mut h = dropout(tape, h, p, rng)?;
        if self.binary {
            let (n, _) = tape.shape(h);
            let f = match features {
                Some(f) => f.clone(),
                None => Array2::zeros((n, BinaryFeatures::DIM)),
            };
            let f = tape.constant(f);
            h = tape.concat_cols(vec![h, f])?;
        }
        linear(tape, h, self.second)
    }
}

#[derive(Debug, Clone)]
pub struct HeadSet {
    pub intent_status: Head,
    pub intent_value: Head,
    pub requested: Head,
    pub user_status: Head,
    pub carryover: Head,
    pub categorical: Head,
    pub start: Head,
    pub end: Head,
    pub cross: Head,
}

impl HeadSet {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        width: usize,
        hidden: usize,
        features: bool,
        std: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let (w, h, b) = (width, hidden, features);
        HeadSet {
            intent_status: Head::init(store, "intent_status", w, h, 2, false, std, rng),
            intent_value: Head::init(store, "intent_value", w, h, 1, false, std, rng),
            requested: Head::init(store, "requested", w, h, 1, b, std, rng),
            user_status: Head::init(store, "user_status", w, h, 3, b, std, rng),
            carryover: Head::init(store, "carryover", w, h, 4, b, std, rng),
            categorical: Head::init(store, "categorical", w, h, 1, false, std, rng),
            start: Head::init(store, "start", 2 * w, h, 1, false, std, rng),
            end: Head::init(store, "end", 2 * w, h, 1, false, std, rng),
            cross: Head::init(store, "cross", 2 * w, h, 1, false, std, rng),
        }
    }
}

pub(crate) fn feature_matrix<F: Scalar>(features: &[BinaryFeatures], rows: &[usize]) -> Array2<F> {
    Array2::from_shape_fn((rows.len(), BinaryFeatures::DIM), |(r, k)| {
        if features[rows[r]].0[k] {
            F::one()
        } else {
            F::zero()
        }
    })
}

pub(crate) fn empty<F: Scalar>(tape: &mut Tape<'_, F>, cols: usize) -> Var {
    tape.constant(Array2::from_elem((0, cols), c(0.0)))
}
