use rand::Rng;

use crate::error::{Error, Result};
use crate::init::rng_for;
use crate::real::Real;
use crate::tensor::Tensor;

/// The eight symmetries of the square: `0` identity, `1..=3` quarter turns
/// counter-clockwise, `4` left-right flip, `5` up-down flip, `6` transpose,
/// `7` anti-transpose.
pub const DIHEDRAL_MODES: usize = 8;

/// Mode that undoes `mode`.
pub fn inverse_mode(mode: usize) -> usize {
    match mode {
        1 => 3,
        3 => 1,
        m => m,
    }
}

/// Applies a dihedral transform to a `[1, H, W]` patch. Quarter turns and
/// transposes swap the spatial extents.
pub fn augment<T: Real>(patch: &Tensor<T>, mode: usize) -> Result<Tensor<T>> {
    if mode >= DIHEDRAL_MODES {
        return Err(Error::config(
            "augment.mode",
            format!("{mode} is not in 0..8"),
        ));
    }
    let s = patch.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::dim(format!(
            "augment: expected [1, H, W], got {s:?}"
        )));
    }
    let (h, w) = (s[1], s[2]);
    let swaps = matches!(mode, 1 | 3 | 6 | 7);
    let (oh, ow) = if swaps { (w, h) } else { (h, w) };
    let src = patch.data();
    // source coordinates of output pixel (i, j)
    let at = |i: usize, j: usize| -> usize {
        let (y, x) = match mode {
            0 => (i, j),
            1 => (j, w - 1 - i),
            2 => (h - 1 - i, w - 1 - j),
            3 => (h - 1 - j, i),
            4 => (i, w - 1 - j),
            5 => (h - 1 - i, j),
            6 => (j, i),
            _ => (h - 1 - j, w - 1 - i),
        };
        y * w + x
    };
    Ok(Tensor::from_fn(&[1, oh, ow], |k| src[at(k / ow, k % ow)]))
}

/// Random square crops drawn with replacement from a set of images.
#[derive(Clone, Debug)]
pub struct PatchDataset<T> {
    images: Vec<Tensor<T>>,
    pub patch_size: usize,
    pub patches_per_epoch: usize,
    pub augment: bool,
    pub seed: u64,
}

impl<T: Real> PatchDataset<T> {
    pub fn new(
        images: Vec<Tensor<T>>,
        patch_size: usize,
        patches_per_epoch: usize,
        augment: bool,
        seed: u64,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::config("data", "no source images"));
        }
        if patch_size == 0 {
            return Err(Error::config("patch_size", "must be positive"));
        }
        for (i, img) in images.iter().enumerate() {
            let s = img.shape();
            if s.len() != 3 || s[0] != 1 || s[1] < patch_size || s[2] < patch_size {
                return Err(Error::config(
                    "patch_size",
                    format!("{patch_size} does not fit source image {i} of shape {s:?}"),
                ));
            }
        }
        Ok(PatchDataset {
            images,
            patch_size,
            patches_per_epoch,
            augment,
            seed,
        })
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    /// Patches of one epoch, a pure function of `(seed, epoch)`.
    pub fn epoch(&self, epoch: usize) -> Vec<Tensor<T>> {
        let mut rng = rng_for(self.seed, epoch as u64 + 1);
        let p = self.patch_size;
        (0..self.patches_per_epoch)
            .map(|_| {
                let img = &self.images[rng.gen_range(0..self.images.len())];
                let (h, w) = (img.shape()[1], img.shape()[2]);
                let y0 = rng.gen_range(0..=h - p);
                let x0 = rng.gen_range(0..=w - p);
                let crop = crop(img, y0, x0, p, p);
                if self.augment {
                    let mode = rng.gen_range(0..DIHEDRAL_MODES);
                    augment(&crop, mode).expect("valid mode and shape")
                } else {
                    crop
                }
            })
            .collect()
    }
}

/// `[1, h, w]` window of a `[1, H, W]` image at `(y0, x0)`.
pub fn crop<T: Real>(img: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Tensor<T> {
    let width = img.shape()[2];
    let src = img.data();
    Tensor::from_fn(&[1, h, w], |k| src[(y0 + k / w) * width + x0 + k % w])
}
