use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::geometry::Screen;
use super::render::{render_class_instance, LabeledImage, Pose, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
}

/// Pre-rendered instances of every class, split into disjoint training and
/// held-out sets.
pub struct InstancePool {
    screen: Screen,
    train: Vec<Vec<Arc<LabeledImage>>>,
    validation: Vec<Vec<Arc<LabeledImage>>>,
}

impl InstancePool {
    pub fn generate(screen: Screen, per_class_train: usize, per_class_validation: usize, seed: u64) -> Result<Self> {
        if per_class_train == 0 || per_class_validation == 0 {
            return Err(Error::Config("instance pools must be non-empty".into()));
        }
        let mut train = Vec::with_capacity(CLASS_COUNT);
        let mut validation = Vec::with_capacity(CLASS_COUNT);
        for class in 0..CLASS_COUNT {
            train.push(render_set(screen, class, per_class_train, seed, "train")?);
            validation.push(render_set(screen, class, per_class_validation, seed, "validation")?);
        }
        Ok(Self {
            screen,
            train,
            validation,
        })
    }

    pub fn screen(&self) -> Screen {
        self.screen
    }

    pub fn instances(&self, class_id: usize, split: Split) -> &[Arc<LabeledImage>] {
        match split {
            Split::Train => &self.train[class_id],
            Split::Validation => &self.validation[class_id],
        }
    }

    /// Every pooled image of the split, class by class.
    pub fn all(&self, split: Split) -> impl Iterator<Item = &Arc<LabeledImage>> {
        let sets = match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
        };
        sets.iter().flatten()
    }
}

fn render_set(screen: Screen, class: usize, n: usize, base: u64, tag: &str) -> Result<Vec<Arc<LabeledImage>>> {
    let mut rng = seed::stream(base, &format!("pool/{tag}/{class}"));
    (0..n)
        .map(|_| {
            let pose = Pose::sample(&mut rng, 0.22, 0.42);
            let s = rand::Rng::random(&mut rng);
            render_class_instance(screen, class, pose, s).map(Arc::new)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let a = InstancePool::generate(Screen::DESK, 3, 2, 7).unwrap();
        let b = InstancePool::generate(Screen::DESK, 3, 2, 7).unwrap();
        for c in 0..CLASS_COUNT {
            for (x, y) in a.instances(c, Split::Train).iter().zip(b.instances(c, Split::Train)) {
                assert_eq!(x.image, y.image);
            }
            for t in a.instances(c, Split::Train) {
                for v in a.instances(c, Split::Validation) {
                    assert_ne!(t.image.digest(), v.image.digest());
                }
            }
            assert_eq!(a.instances(c, Split::Validation).len(), 2);
        }
        assert_eq!(a.all(Split::Train).count(), 3 * CLASS_COUNT);
    }
}
