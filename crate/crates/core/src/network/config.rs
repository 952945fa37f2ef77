use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::tensor::conv_output_len;

/// Shape of the residual network.
///
/// Stem: `conv(stem_kernel, stem_stride) -> BN -> ReLU` with `widths[0]`
/// channels. Stage `s` has `blocks_per_stage[s]` residual blocks of width
/// `widths[s]`; the first block of every stage after the first has stride
/// 2. Global average pooling yields the deep feature `F` (dimension
/// `feature_dim`, equal to the last width) and a bias-free linear map gives
/// `output_count` logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_len: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub kernel_size: usize,
    pub feature_dim: usize,
    pub output_count: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::resnet_mini(1024, 20)
    }
}

impl NetworkConfig {
    /// Desk-scale default: three stages of widths 16/32/64, two blocks each.
    pub fn resnet_mini(input_len: usize, output_count: usize) -> Self {
        Self {
            input_len,
            stem_kernel: 7,
            stem_stride: 2,
            widths: vec![16, 32, 64],
            blocks_per_stage: vec![2, 2, 2],
            kernel_size: 3,
            feature_dim: 64,
            output_count,
        }
    }

    /// Four stages of three blocks: 1 stem + 24 block convolutions + 1
    /// linear layer.
    pub fn resnet26_like(input_len: usize, output_count: usize) -> Self {
        Self {
            input_len,
            stem_kernel: 7,
            stem_stride: 2,
            widths: vec![16, 32, 64, 128],
            blocks_per_stage: vec![3, 3, 3, 3],
            kernel_size: 3,
            feature_dim: 128,
            output_count,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let fail = |m: String| Err(NetworkError::Config(m));
        if self.widths.is_empty() || self.widths.len() != self.blocks_per_stage.len() {
            return fail(format!(
                "widths {:?} and blocks_per_stage {:?} must be nonempty and equally long",
                self.widths, self.blocks_per_stage
            ));
        }
        if self.widths.contains(&0) || self.blocks_per_stage.contains(&0) {
            return fail("every stage needs a positive width and at least one block".into());
        }
        if self.feature_dim < 2 {
            return fail(format!("feature dimension {} must be at least 2", self.feature_dim));
        }
        if self.feature_dim != *self.widths.last().unwrap() {
            return fail(format!(
                "feature dimension {} must equal the last stage width {}",
                self.feature_dim,
                self.widths.last().unwrap()
            ));
        }
        if self.output_count < 2 {
            return fail(format!("output count {} must be at least 2", self.output_count));
        }
        if self.kernel_size % 2 == 0 || self.stem_kernel % 2 == 0 {
            return fail("kernel sizes must be odd".into());
        }
        if self.stem_stride == 0 {
            return fail("stem stride must be positive".into());
        }
        if conv_output_len(self.input_len, self.stem_kernel, self.stem_stride, self.stem_kernel / 2).is_none() {
            return fail(format!("input length {} too short for the stem", self.input_len));
        }
        Ok(())
    }

    /// Number of trainable scalars:
    ///
    /// ```text
    /// stem:        K_s * w0 + 2 w0
    /// block:       k * c_in * c + 2c + k * c * c + 2c
    ///   + projection (c_in != c or stride 2):  c_in * c + 2c
    /// head:        output_count * feature_dim
    /// ```
    ///
    /// Batch-norm running statistics are buffers, not parameters.
    pub fn param_count(&self) -> usize {
        let k = self.kernel_size;
        let mut total = self.stem_kernel * self.widths[0] + 2 * self.widths[0];
        let mut c_in = self.widths[0];
        for (s, (&c, &blocks)) in self.widths.iter().zip(&self.blocks_per_stage).enumerate() {
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                total += k * c_in * c + 2 * c + k * c * c + 2 * c;
                if c_in != c || stride != 1 {
                    total += c_in * c + 2 * c;
                }
                c_in = c;
            }
        }
        total + self.output_count * self.feature_dim
    }

    /// Length of the sequence entering the global pooling.
    pub fn pooled_len(&self) -> usize {
        let mut len = conv_output_len(self.input_len, self.stem_kernel, self.stem_stride, self.stem_kernel / 2).unwrap_or(0);
        for _ in 1..self.widths.len() {
            len = len.div_ceil(2);
        }
        len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        NetworkConfig::resnet_mini(1024, 20).validate().unwrap();
        NetworkConfig::resnet26_like(1024, 21).validate().unwrap();
    }

    #[test]
    fn resnet26_like_has_26_weight_layers() {
        let c = NetworkConfig::resnet26_like(1024, 20);
        let block_convs: usize = c.blocks_per_stage.iter().sum::<usize>() * 2;
        assert_eq!(1 + block_convs + 1, 26);
    }

    #[test]
    fn closed_form_count_of_mini() {
        // stem: 7*16 + 32 = 144
        // stage 1 (16->16, two identity blocks): 2 * (3*16*16 + 32 + 3*16*16 + 32) = 3200
        // stage 2 first block 16->32 stride 2: 3*16*32 + 64 + 3*32*32 + 64 + (16*32 + 64) = 5312
        //         second block: 2 * (3*32*32 + 64) = 6272
        // stage 3 first block 32->64: 3*32*64 + 128 + 3*64*64 + 128 + (32*64 + 128) = 20864
        //         second block: 2 * (3*64*64 + 128) = 24832
        // head: 20 * 64 = 1280
        let expected = 144 + 3200 + 5312 + 6272 + 20864 + 24832 + 1280;
        assert_eq!(NetworkConfig::resnet_mini(1024, 20).param_count(), expected);
    }

    #[test]
    fn invalid_configs() {
        let base = NetworkConfig::resnet_mini(1024, 20);
        let cases = [
            NetworkConfig { feature_dim: 1, widths: vec![1], blocks_per_stage: vec![1], ..base.clone() },
            NetworkConfig { feature_dim: 32, ..base.clone() },
            NetworkConfig { blocks_per_stage: vec![2, 0, 2], ..base.clone() },
            NetworkConfig { widths: vec![16, 32], ..base.clone() },
            NetworkConfig { output_count: 1, ..base.clone() },
            NetworkConfig { kernel_size: 4, ..base.clone() },
            NetworkConfig { input_len: 0, ..base.clone() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn pooled_length() {
        // 1024 -> stem stride 2 -> 512 -> 256 -> 128
        assert_eq!(NetworkConfig::resnet_mini(1024, 20).pooled_len(), 128);
        // odd lengths round up
        assert_eq!(NetworkConfig::resnet_mini(1023, 20).pooled_len(), 128);
    }
}
