//! Batch-norm folding into the preceding convolution.

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::train::layers::{BatchNorm2d, Conv2d};
use crate::train::Network;

/// Folds `bn` into `conv` in place using the running statistics.
pub fn fold_into<T: Scalar>(conv: &mut Conv2d<T>, bn: &BatchNorm2d<T>) -> Result<()> {
    let out = conv.out_channels();
    let per = conv.weight.len() / out;
    for c in 0..out {
        let denom = bn.running_var[c] + bn.eps;
        if !(denom > T::zero()) {
            return Err(Error::BadVariance { channel: c });
        }
        let scale = bn.gamma.data()[c] / denom.sqrt();
        for w in &mut conv.weight.data_mut()[c * per..(c + 1) * per] {
            *w = *w * scale;
        }
        let b = &mut conv.bias.data_mut()[c];
        *b = (*b - bn.running_mean[c]) * scale + bn.beta.data()[c];
    }
    Ok(())
}

/// Copy of `net` with both batch-norm layers folded away.
pub fn fold_bn<T: Scalar>(net: &Network<T>) -> Result<Network<T>> {
    let mut out = net.clone();
    if let Some(bn) = out.bn1.take() {
        fold_into(&mut out.conv1, &bn)?;
    }
    if let Some(bn) = out.bn2.take() {
        fold_into(&mut out.conv2, &bn)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_bn_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, &mut rng);
        let before = conv.clone();
        let mut bn = BatchNorm2d::new(3);
        bn.eps = 0.0;
        fold_into(&mut conv, &bn).unwrap();
        assert_eq!(conv, before);
    }

    #[test]
    fn gamma_two_doubles_the_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, &mut rng);
        let before = conv.clone();
        let mut bn = BatchNorm2d::new(3);
        bn.eps = 0.0;
        bn.gamma = Tensor::from_vec([3, 1, 1, 1], vec![1.0, 2.0, 1.0]).unwrap();
        fold_into(&mut conv, &bn).unwrap();
        for i in 18..36 {
            assert_eq!(conv.weight.data()[i], 2.0 * before.weight.data()[i]);
        }
        assert_eq!(conv.weight.data()[..18], before.weight.data()[..18]);
    }

    #[test]
    fn nonpositive_variance_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(1, 2, 3, 1, &mut rng);
        let mut bn = BatchNorm2d::new(2);
        bn.eps = 0.0;
        bn.running_var[1] = 0.0;
        assert!(matches!(fold_into(&mut conv, &bn), Err(Error::BadVariance { channel: 1 })));
    }
}
