//! Weak (geometric) and strong (photometric + cutout) views. Both views of an
//! image share one geometry, so pixel `j` of the weak view and pixel `j` of
//! the strong view show the same scene point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;
use crate::pseudo::LabelMap;

pub const MAX_SHIFT: i32 = 2;
pub const CUTOUT_FILL: f64 = 0.5;
pub const CUTOUT_MAX_SIDE: f64 = 0.4;

/// Horizontal flip followed by an integer translation with edge replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Geometry {
    pub flip: bool,
    pub dx: i32,
    pub dy: i32,
}

impl Geometry {
    pub fn identity() -> Self {
        Geometry::default()
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        Geometry {
            flip: rng.gen_bool(0.5),
            dx: rng.gen_range(-MAX_SHIFT..=MAX_SHIFT),
            dy: rng.gen_range(-MAX_SHIFT..=MAX_SHIFT),
        }
    }

    /// Source pixel (row, col) that lands on output pixel (y, x).
    #[inline]
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        let sy = (y as i32 - self.dy).clamp(0, h as i32 - 1) as usize;
        let tx = (x as i32 - self.dx).clamp(0, w as i32 - 1) as usize;
        let sx = if self.flip { w - 1 - tx } else { tx };
        (sy, sx)
    }

    fn remap<T: Copy>(&self, src: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
        let n = h * w;
        let mut out = Vec::with_capacity(src.len());
        for c in 0..planes {
            let plane = &src[c * n..(c + 1) * n];
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = self.source(y, x, h, w);
                    out.push(plane[sy * w + sx]);
                }
            }
        }
        out
    }

    pub fn apply_image(&self, image: &Tensor) -> Tensor {
        let (c, h, w) = image.dims3().expect("image is C×H×W");
        Tensor::from_parts(vec![c, h, w], self.remap(image.data(), c, h, w))
    }

    /// Labels move with the image; integer offsets make this a nearest lookup.
    pub fn apply_labels(&self, labels: &LabelMap) -> LabelMap {
        LabelMap {
            height: labels.height,
            width: labels.width,
            labels: self.remap(&labels.labels, 1, labels.height, labels.width),
        }
    }
}

/// Weakly augmented image plus the geometry that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakView {
    pub image: Tensor,
    pub geometry: Geometry,
    pub label: Option<LabelMap>,
}

pub fn weak_augment(image: &Tensor, label: Option<&LabelMap>, seed: u64) -> WeakView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = Geometry::sample(&mut rng);
    weak_augment_with(image, label, geometry)
}

pub fn weak_augment_with(image: &Tensor, label: Option<&LabelMap>, geometry: Geometry) -> WeakView {
    WeakView {
        image: geometry.apply_image(image),
        geometry,
        label: label.map(|l| geometry.apply_labels(l)),
    }
}

/// Axis-aligned rectangle filled with [`CUTOUT_FILL`]; zero area is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cutout {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Draw of the strong photometric transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photometric {
    pub scale: [f64; 3],
    pub shift: [f64; 3],
    pub cutout: Cutout,
}

impl Photometric {
    pub fn identity() -> Self {
        Photometric {
            scale: [1.0; 3],
            shift: [0.0; 3],
            cutout: Cutout::default(),
        }
    }

    pub fn sample(rng: &mut impl Rng, h: usize, w: usize) -> Self {
        let mut scale = [0.0; 3];
        let mut shift = [0.0; 3];
        for c in 0..3 {
            scale[c] = rng.gen_range(0.7..=1.3);
            shift[c] = rng.gen_range(-0.15..=0.15);
        }
        let ch = rng.gen_range(0..=(CUTOUT_MAX_SIDE * h as f64) as usize);
        let cw = rng.gen_range(0..=(CUTOUT_MAX_SIDE * w as f64) as usize);
        let cutout = Cutout {
            top: rng.gen_range(0..=h - ch),
            left: rng.gen_range(0..=w - cw),
            height: ch,
            width: cw,
        };
        Photometric { scale, shift, cutout }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongView {
    pub image: Tensor,
    pub photometric: Photometric,
}

pub fn strong_augment(weak: &WeakView, seed: u64) -> StrongView {
    let (_, h, w) = weak.image.dims3().expect("image is C×H×W");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let photometric = Photometric::sample(&mut rng, h, w);
    strong_augment_with(weak, photometric)
}

/// Per-channel `clamp(scale · x + shift)`, then the cutout rectangle.
pub fn strong_augment_with(weak: &WeakView, photometric: Photometric) -> StrongView {
    let (c, h, w) = weak.image.dims3().expect("image is C×H×W");
    let n = h * w;
    let mut data = weak.image.data().to_vec();
    for ch in 0..c {
        let (s, b) = (photometric.scale[ch % 3], photometric.shift[ch % 3]);
        for v in &mut data[ch * n..(ch + 1) * n] {
            *v = (s * *v + b).clamp(0.0, 1.0);
        }
    }
    let cut = photometric.cutout;
    for ch in 0..c {
        for y in cut.top..cut.top + cut.height {
            let row = ch * n + y * w;
            data[row + cut.left..row + cut.left + cut.width].fill(CUTOUT_FILL);
        }
    }
    StrongView {
        image: Tensor::from_parts(vec![c, h, w], data),
        photometric,
    }
}

/// Weak and strong views of one unlabeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub weak_image: Tensor,
    pub strong_image: Tensor,
    pub geometry: Geometry,
    pub label: Option<LabelMap>,
}

impl AugmentedPair {
    pub fn new(weak: WeakView, strong: StrongView) -> Self {
        AugmentedPair {
            weak_image: weak.image,
            strong_image: strong.image,
            geometry: weak.geometry,
            label: weak.label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        let data = (0..3 * h * w).map(|i| (i % 97) as f64 / 97.0).collect();
        Tensor::new(vec![3, h, w], data).unwrap()
    }

    #[test]
    fn identity_geometry_is_noop() {
        let img = ramp(6, 7);
        let labels = LabelMap::new(6, 7, (0..42).map(|i| (i % 4) as u8).collect()).unwrap();
        let v = weak_augment_with(&img, Some(&labels), Geometry::identity());
        assert_eq!(v.image, img);
        assert_eq!(v.label.unwrap(), labels);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(5, 8);
        let g = Geometry { flip: true, dx: 0, dy: 0 };
        assert_ne!(g.apply_image(&img), img);
        assert_eq!(g.apply_image(&g.apply_image(&img)), img);
    }

    #[test]
    fn translation_replicates_edges() {
        let img = ramp(4, 4);
        let g = Geometry { flip: false, dx: 2, dy: 0 };
        let out = g.apply_image(&img);
        for y in 0..4 {
            assert_eq!(out.data()[y * 4], img.data()[y * 4]);
            assert_eq!(out.data()[y * 4 + 1], img.data()[y * 4]);
            assert_eq!(out.data()[y * 4 + 3], img.data()[y * 4 + 1]);
        }
    }

    #[test]
    fn seeded_views_are_reproducible() {
        let img = ramp(8, 8);
        assert_eq!(weak_augment(&img, None, 77), weak_augment(&img, None, 77));
        let weak = weak_augment(&img, None, 77);
        assert_eq!(strong_augment(&weak, 5), strong_augment(&weak, 5));
        // recorded geometry reproduces the weak view
        assert_eq!(weak.geometry.apply_image(&img), weak.image);
    }

    #[test]
    fn identity_photometric_draw() {
        let img = ramp(8, 8);
        let weak = weak_augment(&img, None, 1);
        let strong = strong_augment_with(&weak, Photometric::identity());
        assert_eq!(strong.image, weak.image);
    }

    proptest! {
        #[test]
        fn strong_view_stays_in_range(seed in any::<u64>()) {
            let img = ramp(10, 12);
            let weak = weak_augment(&img, None, seed);
            let strong = strong_augment(&weak, seed.wrapping_add(1));
            prop_assert!(strong.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let cut = strong.photometric.cutout;
            prop_assert!(cut.height as f64 <= 0.4 * 10.0 && cut.width as f64 <= 0.4 * 12.0);
            for c in 0..3 {
                for y in cut.top..cut.top + cut.height {
                    for x in cut.left..cut.left + cut.width {
                        prop_assert_eq!(strong.image.data()[(c * 10 + y) * 12 + x], CUTOUT_FILL);
                    }
                }
            }
        }
    }
}
