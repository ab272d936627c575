use super::{Graph, NodeId, Scalar, Tensor};
use crate::error::{Result, TensorError};

/// One compared gradient entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementError {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of comparing backward gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub elements: Vec<ElementError>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ElementError> {
        self.elements
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn eval_scalar<T: Scalar, F>(f: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let out = f(&mut g, &ids)?;
    let v = g.value(out)?;
    if v.numel() != 1 {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0].as_f64())
}

/// Compares the reverse-mode gradient of the scalar closure `f` with the
/// central difference `(f(x+eps) - f(x-eps)) / 2eps`, element by element.
///
/// Relative error is `|a - n| / max(1e-8, |a| + |n|)`; the check passes when
/// its maximum stays below `tolerance`.
pub fn grad_check<T: Scalar, F>(
    op: &str,
    f: F,
    inputs: &[Tensor<T>],
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Invalid(format!("grad_check step must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &ids)?;
    g.backward(out)?;

    let mut elements = Vec::new();
    let mut probe = inputs.to_vec();
    for (input, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).expect("leaf requested a gradient").to_vec();
        for index in 0..inputs[input].numel() {
            let orig = inputs[input].data()[index];
            // The represented step can differ from 2·eps in low precision.
            let hi = T::from_f64(orig.as_f64() + eps);
            let lo = T::from_f64(orig.as_f64() - eps);
            probe[input].data_mut()[index] = hi;
            let plus = eval_scalar(&f, &probe)?;
            probe[input].data_mut()[index] = lo;
            let minus = eval_scalar(&f, &probe)?;
            probe[input].data_mut()[index] = orig;

            let numeric = (plus - minus) / (hi.as_f64() - lo.as_f64());
            let a = analytic[index].as_f64();
            let rel_error = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            elements.push(ElementError {
                input,
                index,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    let max_rel_error = elements.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        op: op.to_string(),
        max_rel_error,
        tolerance,
        elements,
        passed: max_rel_error < tolerance,
    })
}
