//! Central finite-difference check of analytic parameter gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::MmPyramid;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both gradients vanish.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

fn norm<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

/// Compare `loss`'s backward pass with `(f(θ+h) − f(θ−h)) / 2h` for every
/// scalar of every parameter tensor.
pub fn check_parameter_gradients(
    model: &mut MmPyramid,
    step: f64,
    loss: impl Fn(&MmPyramid, &mut Graph) -> Result<Var>,
) -> Result<Vec<TensorCheck>> {
    let analytic = {
        let mut g = Graph::new(&model.store);
        let l = loss(model, &mut g)?;
        g.param_grads(l)
    };
    let eval = |m: &MmPyramid| -> Result<f64> {
        let mut g = Graph::new(&m.store);
        let l = loss(m, &mut g)?;
        Ok(g.value(l)[[0, 0]])
    };
    let ids: Vec<_> = model.store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for (id, a) in ids.into_iter().zip(&analytic) {
        let len = model.store.get(id).len();
        let mut numeric = Vec::with_capacity(len);
        for k in 0..len {
            let set = |m: &mut MmPyramid, v: f64| {
                m.store.get_mut(id).as_slice_mut().expect("standard layout")[k] = v;
            };
            let orig = model.store.get(id).as_slice().expect("standard layout")[k];
            set(model, orig + step);
            let plus = eval(model)?;
            set(model, orig - step);
            let minus = eval(model)?;
            set(model, orig);
            numeric.push((plus - minus) / (2.0 * step));
        }
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = norm(a.iter()) + norm(numeric.iter());
        out.push(TensorCheck {
            name: model.store.name(id).to_string(),
            relative_error: if scale == 0.0 { 0.0 } else { diff / scale },
            analytic_norm: norm(a.iter()),
        });
    }
    Ok(out)
}
