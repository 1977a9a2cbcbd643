use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::tensor::Tensor;

pub const FPS: u32 = 20;

/// Joint coordinates over time, as stored in a skeleton clip file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub fps: u32,
    pub joints: usize,
    pub frames: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    #[serde(default)]
    pub beat_frames: Vec<usize>,
}

impl SkeletonSequence {
    pub fn new(frames: Vec<Vec<[f64; 3]>>) -> Result<Self, MotionError> {
        let joints = frames.first().map_or(0, |f| f.len());
        let s = SkeletonSequence {
            fps: FPS,
            joints,
            frames,
            genre: None,
            beat_frames: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        if self.fps != FPS {
            return Err(MotionError::Invalid(format!("fps must be {FPS}, got {}", self.fps)));
        }
        if self.frames.is_empty() {
            return Err(MotionError::Invalid("clip has no frames".into()));
        }
        if self.joints == 0 {
            return Err(MotionError::Invalid("clip has no joints".into()));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != self.joints {
                return Err(MotionError::Invalid(format!(
                    "frame {t} has {} joints, expected {}",
                    f.len(),
                    self.joints
                )));
            }
            if f.iter().flatten().any(|v| !v.is_finite()) {
                return Err(MotionError::Invalid(format!("frame {t} has a non-finite coordinate")));
            }
        }
        if let Some(&b) = self.beat_frames.iter().find(|&&b| b >= self.frames.len()) {
            return Err(MotionError::Invalid(format!("beat frame {b} beyond {} frames", self.frames.len())));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, MotionError> {
        let s: SkeletonSequence = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("skeleton clips always serialize")
    }

    pub fn read(path: &Path) -> Result<Self, MotionError> {
        let text = std::fs::read_to_string(path).map_err(|e| MotionError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), MotionError> {
        std::fs::write(path, self.to_json()).map_err(|e| MotionError::Io(format!("{}: {e}", path.display())))
    }

    /// Subtract the root joint from every joint, frame by frame.
    pub fn root_centered(&self, root: usize) -> SkeletonSequence {
        let mut out = self.clone();
        for f in &mut out.frames {
            let r = f[root];
            for p in f.iter_mut() {
                for k in 0..3 {
                    p[k] -= r[k];
                }
            }
        }
        out
    }

    /// Rows ordered frame-major `(t, j)`, columns x, y, z.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.frames.iter().flatten().flat_map(|p| p.iter().copied()).collect();
        Tensor::new(&[self.len() * self.joints, 3], data).expect("validated clip shape")
    }

    /// 1 at annotated beat frames, 0 elsewhere.
    pub fn beat_vector(&self) -> Vec<u8> {
        let mut v = vec![0; self.len()];
        for &b in &self.beat_frames {
            if b < v.len() {
                v[b] = 1;
            }
        }
        v
    }

    /// Frames `start..start+len` with beat annotations shifted accordingly.
    pub fn window(&self, start: usize, len: usize) -> SkeletonSequence {
        let end = (start + len).min(self.len());
        SkeletonSequence {
            fps: self.fps,
            joints: self.joints,
            frames: self.frames[start..end].to_vec(),
            genre: self.genre.clone(),
            beat_frames: self
                .beat_frames
                .iter()
                .filter(|&&b| b >= start && b < end)
                .map(|b| b - start)
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    /// Rotation angles about x, y and z in radians.
    pub angles: [f64; 3],
    pub scale: f64,
    pub translation: [f64; 3],
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        angles: [0.0; 3],
        scale: 1.0,
        translation: [0.0; 3],
    };

    pub fn sample(rng: &mut impl Rng) -> Self {
        let max = 15f64.to_radians();
        AffineParams {
            angles: [rng.gen_range(-max..=max), rng.gen_range(-max..=max), rng.gen_range(-max..=max)],
            scale: rng.gen_range(0.9..=1.1),
            translation: [
                rng.gen_range(-0.05..=0.05),
                rng.gen_range(-0.05..=0.05),
                rng.gen_range(-0.05..=0.05),
            ],
        }
    }

    /// Rz · Ry · Rx
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (sx, cx) = self.angles[0].sin_cos();
        let (sy, cy) = self.angles[1].sin_cos();
        let (sz, cz) = self.angles[2].sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        mat3(&mat3(&rz, &ry), &rx)
    }

    pub fn apply(&self, seq: &SkeletonSequence) -> SkeletonSequence {
        let r = self.rotation();
        let mut out = seq.clone();
        for p in out.frames.iter_mut().flatten() {
            let v = *p;
            for i in 0..3 {
                p[i] = self.scale * (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]) + self.translation[i];
            }
        }
        out
    }
}

fn mat3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    o
}

/// One random rotation, scale and translation applied to every frame.
pub fn augment_affine(seq: &SkeletonSequence, rng: &mut impl Rng) -> SkeletonSequence {
    AffineParams::sample(rng).apply(seq)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn clip() -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = (0..6)
            .map(|_| (0..4).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
            .collect();
        SkeletonSequence::new(frames).unwrap()
    }

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn identity_leaves_clip_unchanged() {
        let c = clip();
        assert_eq!(AffineParams::IDENTITY.apply(&c), c);
    }

    #[test]
    fn distances_scale_by_factor() {
        let c = clip();
        let p = AffineParams::sample(&mut ChaCha8Rng::seed_from_u64(9));
        let a = p.apply(&c);
        for (f0, f1) in c.frames.iter().zip(&a.frames) {
            for i in 0..4 {
                for j in 0..i {
                    let want = p.scale * dist(f0[i], f0[j]);
                    assert!((dist(f1[i], f1[j]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_augmentation() {
        let c = clip();
        let a = augment_affine(&c, &mut ChaCha8Rng::seed_from_u64(2));
        let b = augment_affine(&c, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut c = clip();
        c.genre = Some("house".into());
        c.beat_frames = vec![0, 5];
        assert_eq!(SkeletonSequence::from_json(&c.to_json()).unwrap(), c);
        c.beat_frames.push(6);
        assert!(SkeletonSequence::from_json(&c.to_json()).is_err());
        let bad = r#"{"fps":20,"joints":2,"frames":[[[0,0,0]]]}"#;
        assert!(SkeletonSequence::from_json(bad).is_err());
        let bad_fps = r#"{"fps":30,"joints":1,"frames":[[[0,0,0]]]}"#;
        assert!(SkeletonSequence::from_json(bad_fps).is_err());
    }

    #[test]
    fn root_centering_removes_translation() {
        let c = clip();
        let moved = AffineParams {
            translation: [0.3, -0.2, 0.1],
            ..AffineParams::IDENTITY
        }
        .apply(&c);
        let a = c.root_centered(1).to_tensor();
        let b = moved.root_centered(1).to_tensor();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
