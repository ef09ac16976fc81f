//! Parameter and operation counts.
//!
//! FLOPs count a multiply-accumulate as two operations and cover the
//! convolutions, the attention matrix products and the block sampling and
//! adjoint products. Normalisation, softmax, activations, bias additions and
//! elementwise residuals are not counted.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, OctufModel};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityEntry {
    pub name: String,
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub height: usize,
    pub width: usize,
    pub entries: Vec<ComplexityEntry>,
}

impl ComplexityReport {
    pub const CSV_HEADER: &'static str = "name,params,flops";

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|e| e.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    /// One line stating the input size and counting convention.
    pub fn convention(&self) -> String {
        format!(
            "FLOPs for a {}x{} input; one multiply-accumulate counts as 2 FLOPs",
            self.height, self.width
        )
    }

    /// Entries followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.entries {
            out += &format!("{},{},{}\n", e.name, e.params, e.flops);
        }
        out += &format!("total,{},{}\n", self.total_params(), self.total_flops());
        out
    }
}

/// Convolution FLOPs on an `hw`-pixel output.
pub fn conv_flops(cin: usize, cout: usize, groups: usize, kernel: usize, hw: usize) -> u64 {
    2 * (cout * (cin / groups) * kernel * kernel * hw) as u64
}

pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

/// One cross attention over `c` channels with a `q`-channel query.
fn attention_flops(c: usize, q: usize, hw: usize) -> u64 {
    let embeds = conv_flops(c, c, 1, 1, hw) * 2 + conv_flops(q, c, 1, 1, hw);
    let depthwise = conv_flops(c, c, c, 3, hw) * 3;
    let maps = matmul_flops(c, hw, c) * 2;
    embeds + depthwise + maps + conv_flops(c, c, 1, 1, hw)
}

/// Parameter count per module (sampler, embedding conv, and each
/// iteration's blocks) together with FLOPs for an `height x width` input.
pub fn complexity<T: Real>(
    model: &OctufModel<T>,
    height: usize,
    width: usize,
) -> Result<ComplexityReport> {
    let cfg: &ModelConfig = &model.config;
    let b = cfg.block_size;
    if height == 0 || width == 0 || !height.is_multiple_of(b) || !width.is_multiple_of(b) {
        return Err(Error::dim(format!(
            "complexity: {height}x{width} is not a positive multiple of block size {b}"
        )));
    }
    let hw = height * width;
    let (c, m, n) = (cfg.channels, model.sampler.measurements, b * b);
    let blocks = hw / n;
    let sampling = matmul_flops(m, n, blocks);
    let ffb = |e: usize| {
        conv_flops(c, e * c, 1, 1, hw)
            + conv_flops(e * c, e * c, e * c, 3, hw)
            + conv_flops(e * c, c, 1, 1, hw)
    };

    let group_params = |prefix: &str| -> usize {
        model
            .params
            .iter()
            .filter(|(_, name, _)| name.starts_with(prefix))
            .map(|(_, _, t)| t.len())
            .sum()
    };
    let mut entries = vec![
        ComplexityEntry {
            name: "sampler".into(),
            params: group_params("sampler."),
            // measurement plus the initial adjoint
            flops: 2 * sampling,
        },
        ComplexityEntry {
            name: "conv0".into(),
            params: group_params("conv0."),
            flops: conv_flops(1, c, 1, 3, hw),
        },
    ];
    for (k, it) in model.iterations.iter().enumerate() {
        let name = format!("iter{:02}", k + 1);
        if it.isca.is_some() {
            entries.push(ComplexityEntry {
                name: format!("{name}.isca"),
                params: group_params(&format!("{name}.isca.")),
                flops: attention_flops(c - 1, c - 1, hw),
            });
        }
        entries.push(ComplexityEntry {
            name: format!("{name}.pgca"),
            params: group_params(&format!("{name}.pgca.")),
            flops: 2 * sampling + attention_flops(c - 1, 1, hw) + conv_flops(c, c, 1, 1, hw),
        });
        entries.push(ComplexityEntry {
            name: format!("{name}.ffn"),
            params: group_params(&format!("{name}.ffn.")),
            flops: 2 * ffb(cfg.ffb_expansion),
        });
    }
    let report = ComplexityReport {
        height,
        width,
        entries,
    };
    debug_assert_eq!(report.total_params(), model.params.scalar_count());
    Ok(report)
}
