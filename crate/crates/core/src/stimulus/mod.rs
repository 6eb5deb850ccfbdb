//! Procedural stimuli: object specs, rendering, dataset splits and the
//! frozen convolutional frontend that maps images to perceptual vectors.

mod frontend;
mod io;
mod render;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};

pub use frontend::{
    decodability_gate, gate_accuracy, pretrain_frontend, pretraining_specs, EmbeddingCache, FrontendConfig, GateReport,
    PerceptualFrontend,
};
pub use io::{read_attribute_table, read_image_blob, write_attribute_table, write_image_blob};
pub use render::{render_stimulus, texture_field, Image};

/// Number of canvas quadrants; location is always a quadrant index.
pub const N_LOCATIONS: usize = 4;

/// Background drawn under the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Background {
    Blank,
    Texture(u64),
}

impl Background {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Background::Blank => None,
            Background::Texture(s) => Some(*s),
        }
    }
}

/// Generative attributes of one object.
///
/// `identity` indexes the variant within the category. Index `n_id` is the
/// held-out variant used only by the novel-identity split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub category: usize,
    pub identity: usize,
    pub location: usize,
    /// Degrees in `[0, 360)`.
    pub view_angle: u16,
    pub background: Background,
}

/// Dataset split a stimulus is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    NovelAngle,
    NovelIdentity,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::NovelAngle, Split::NovelIdentity];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::NovelAngle => "novel_angle",
            Split::NovelIdentity => "novel_identity",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "novel_angle" => Ok(Split::NovelAngle),
            "novel_identity" => Ok(Split::NovelIdentity),
            other => domain_err!("unknown split `{other}`"),
        }
    }
}

/// Texture background pool; trials draw one of `pool` seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextureConfig {
    pub pool: u32,
    pub base_seed: u64,
}

/// Canvas geometry and attribute cardinalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanvasConfig {
    pub height: usize,
    pub width: usize,
    pub n_cat: usize,
    pub n_id: usize,
    /// Angle grid spacing in degrees; the grid is `0, step, 2·step, …`.
    pub angle_step: u16,
    /// Grid angles held out for novel-angle validation.
    pub novel_angles: Vec<u16>,
    /// Supersampling factor per axis used for anti-aliasing.
    pub supersample: usize,
    pub texture: Option<TextureConfig>,
}

impl Default for CanvasConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            n_cat: 4,
            n_id: 2,
            angle_step: 15,
            novel_angles: vec![15, 105, 195, 285],
            supersample: 4,
            texture: None,
        }
    }
}

impl CanvasConfig {
    /// 8 categories with 4 identities each.
    pub fn larger() -> Self {
        Self {
            n_cat: 8,
            n_id: 4,
            ..Self::default()
        }
    }

    pub fn with_texture(mut self, pool: u32, base_seed: u64) -> Self {
        self.texture = Some(TextureConfig { pool, base_seed });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 || self.height % 8 != 0 || self.width % 8 != 0 {
            return domain_err!("canvas {}x{} must be a multiple of 8", self.height, self.width);
        }
        if self.n_cat < 1 || self.n_cat > render::N_FAMILIES {
            return domain_err!("n_cat must be in 1..={}", render::N_FAMILIES);
        }
        if self.n_id < 1 || self.n_id + 1 > render::N_VARIANTS {
            return domain_err!("n_id must be in 1..={}", render::N_VARIANTS - 1);
        }
        if self.angle_step == 0 || 360 % self.angle_step != 0 {
            return domain_err!("angle_step must divide 360");
        }
        for a in &self.novel_angles {
            if a % self.angle_step != 0 || *a >= 360 {
                return domain_err!("novel angle {a} is not on the angle grid");
            }
        }
        if self.training_angles().is_empty() || self.novel_angles.is_empty() {
            return domain_err!("both angle sets must be non-empty");
        }
        if self.supersample == 0 {
            return domain_err!("supersample must be positive");
        }
        Ok(())
    }

    pub fn training_angles(&self) -> Vec<u16> {
        (0..360 / self.angle_step)
            .map(|k| k * self.angle_step)
            .filter(|a| !self.novel_angles.contains(a))
            .collect()
    }

    /// Dense identity label count over trained identities.
    pub fn n_identities(&self) -> usize {
        self.n_cat * self.n_id
    }

    pub fn check(&self, spec: &StimulusSpec) -> Result<()> {
        if spec.category >= self.n_cat {
            return domain_err!("category {} out of range (n_cat = {})", spec.category, self.n_cat);
        }
        if spec.identity > self.n_id {
            return domain_err!("identity {} out of range (n_id = {})", spec.identity, self.n_id);
        }
        if spec.location >= N_LOCATIONS {
            return domain_err!("location {} out of range", spec.location);
        }
        if spec.view_angle >= 360 {
            return domain_err!("view angle {} out of range", spec.view_angle);
        }
        Ok(())
    }

    fn background<R: Rng + ?Sized>(&self, rng: &mut R) -> Background {
        match self.texture {
            None => Background::Blank,
            Some(t) => Background::Texture(t.base_seed + rng.random_range(0..t.pool.max(1)) as u64),
        }
    }

    /// Every stimulus the splits can produce with a blank background.
    pub fn all_blank_specs(&self) -> Vec<StimulusSpec> {
        let mut angles = self.training_angles();
        angles.extend(self.novel_angles.iter().copied());
        angles.sort_unstable();
        let mut out = Vec::new();
        for category in 0..self.n_cat {
            for identity in 0..=self.n_id {
                for location in 0..N_LOCATIONS {
                    for &view_angle in &angles {
                        out.push(StimulusSpec {
                            category,
                            identity,
                            location,
                            view_angle,
                            background: Background::Blank,
                        });
                    }
                }
            }
        }
        out
    }

    /// All training-split combinations with the given background.
    pub fn training_specs(&self, background: Background) -> Vec<StimulusSpec> {
        let angles = self.training_angles();
        let mut out = Vec::new();
        for category in 0..self.n_cat {
            for identity in 0..self.n_id {
                for location in 0..N_LOCATIONS {
                    for &view_angle in &angles {
                        out.push(StimulusSpec {
                            category,
                            identity,
                            location,
                            view_angle,
                            background,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Draw one stimulus from `split`.
pub fn sample_split<R: Rng + ?Sized>(rng: &mut R, canvas: &CanvasConfig, split: Split) -> StimulusSpec {
    let train_angles = canvas.training_angles();
    let category = rng.random_range(0..canvas.n_cat);
    let location = rng.random_range(0..N_LOCATIONS);
    let (identity, view_angle) = match split {
        Split::Train => (
            rng.random_range(0..canvas.n_id),
            train_angles[rng.random_range(0..train_angles.len())],
        ),
        Split::NovelAngle => (
            rng.random_range(0..canvas.n_id),
            canvas.novel_angles[rng.random_range(0..canvas.novel_angles.len())],
        ),
        Split::NovelIdentity => (canvas.n_id, train_angles[rng.random_range(0..train_angles.len())]),
    };
    StimulusSpec {
        category,
        identity,
        location,
        view_angle,
        background: canvas.background(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn angle_sets_are_disjoint() {
        let c = CanvasConfig::default();
        let train = c.training_angles();
        assert_eq!(train.len(), 20);
        assert!(train.iter().all(|a| !c.novel_angles.contains(a)));
        c.validate().unwrap();
        CanvasConfig::larger().validate().unwrap();
    }

    #[test]
    fn splits_respect_definitions() {
        let c = CanvasConfig::default();
        let train = c.training_angles();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let s = sample_split(&mut rng, &c, Split::Train);
            assert!(train.contains(&s.view_angle) && s.identity < c.n_id);
            let s = sample_split(&mut rng, &c, Split::NovelAngle);
            assert!(!train.contains(&s.view_angle) && s.identity < c.n_id);
            let s = sample_split(&mut rng, &c, Split::NovelIdentity);
            assert!(train.contains(&s.view_angle) && s.identity == c.n_id);
            c.check(&s).unwrap();
        }
    }

    /// Pearson chi-square statistic against a uniform expectation.
    fn chi_square(counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        let e = n as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
    }

    #[test]
    fn split_marginals_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let c = CanvasConfig::default();
        let n = 10_000;
        for split in Split::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut cat = vec![0; c.n_cat];
            let mut loc = vec![0; N_LOCATIONS];
            let mut id = vec![0; c.n_id];
            for _ in 0..n {
                let s = sample_split(&mut rng, &c, split);
                cat[s.category] += 1;
                loc[s.location] += 1;
                if s.identity < c.n_id {
                    id[s.identity] += 1;
                }
            }
            let mut tables = vec![cat, loc];
            if split != Split::NovelIdentity {
                tables.push(id);
            }
            for counts in tables {
                let k = counts.len();
                for &cnt in &counts {
                    let p = cnt as f64 / n as f64;
                    assert!((p - 1.0 / k as f64).abs() < 0.03, "{split:?} {counts:?}");
                }
                let stat = chi_square(&counts);
                let pval = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(stat);
                assert!(pval > 1e-3, "{split:?} chi2 p = {pval}");
            }
        }
    }

    #[test]
    fn rejects_bad_indices() {
        let c = CanvasConfig::default();
        let mut s = sample_split(&mut ChaCha8Rng::seed_from_u64(0), &c, Split::Train);
        s.category = 4;
        assert!(c.check(&s).is_err());
        s.category = 0;
        s.location = 4;
        assert!(c.check(&s).is_err());
    }
}
