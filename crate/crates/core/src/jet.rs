//! Jets: a configuration together with its time derivatives at one instant.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(q, q̇, …, q⁽ᵏ⁾)` in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct JetPoint<S> {
    derivs: Vec<Vec<S>>,
}

impl<S: Scalar> JetPoint<S> {
    /// Builds a jet from its derivative layers. All layers must share one nonzero length.
    pub fn new(derivs: Vec<Vec<S>>) -> Result<Self> {
        let n = derivs.first().map(Vec::len).unwrap_or(0);
        if n == 0 {
            return Err(Error::Dimension("jet needs at least one nonempty layer".into()));
        }
        if let Some(bad) = derivs.iter().position(|d| d.len() != n) {
            return Err(Error::Dimension(format!(
                "jet layer {bad} has length {}, expected {n}",
                derivs[bad].len()
            )));
        }
        Ok(JetPoint { derivs })
    }

    pub fn from_state(q: &[S], qd: &[S]) -> Self {
        assert_eq!(q.len(), qd.len(), "position and velocity lengths differ");
        JetPoint {
            derivs: vec![q.to_vec(), qd.to_vec()],
        }
    }

    pub fn from_second_order(q: &[S], qd: &[S], qdd: &[S]) -> Self {
        assert!(q.len() == qd.len() && qd.len() == qdd.len(), "jet layer lengths differ");
        JetPoint {
            derivs: vec![q.to_vec(), qd.to_vec(), qdd.to_vec()],
        }
    }

    /// Highest derivative carried.
    pub fn order(&self) -> usize {
        self.derivs.len() - 1
    }

    /// Chart dimension `n`.
    pub fn dim(&self) -> usize {
        self.derivs[0].len()
    }

    /// `q⁽ˢ⁾`. Layers above [`order`](Self::order) read as zero, which is what
    /// a residual that ignores them expects.
    pub fn deriv(&self, s: usize) -> std::borrow::Cow<'_, [S]> {
        match self.derivs.get(s) {
            Some(d) => std::borrow::Cow::Borrowed(d),
            None => std::borrow::Cow::Owned(vec![S::zero(); self.dim()]),
        }
    }

    pub fn q(&self) -> &[S] {
        &self.derivs[0]
    }

    pub fn qd(&self) -> &[S] {
        self.derivs.get(1).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn layers(&self) -> &[Vec<S>] {
        &self.derivs
    }

    pub fn into_layers(self) -> Vec<Vec<S>> {
        self.derivs
    }

    /// Pads or truncates to order `k` (new layers are zero).
    pub fn with_order(&self, k: usize) -> Self {
        let n = self.dim();
        let mut derivs = self.derivs.clone();
        derivs.resize(k + 1, vec![S::zero(); n]);
        JetPoint { derivs }
    }

    /// Applies `f` to every entry; used to lift a jet into dual numbers.
    pub fn map<T: Scalar>(&self, f: impl Fn(usize, usize, S) -> T) -> JetPoint<T> {
        JetPoint {
            derivs: self
                .derivs
                .iter()
                .enumerate()
                .map(|(s, d)| d.iter().enumerate().map(|(i, &x)| f(s, i, x)).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_layers() {
        assert!(JetPoint::new(vec![vec![0.0, 1.0], vec![2.0]]).is_err());
        assert!(JetPoint::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn order_and_padding() {
        let j = JetPoint::from_state(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(j.order(), 1);
        assert_eq!(j.deriv(2).as_ref(), &[0.0, 0.0]);
        let j2 = j.with_order(2);
        assert_eq!(j2.order(), 2);
        assert_eq!(j2.with_order(0).layers().len(), 1);
    }
}
