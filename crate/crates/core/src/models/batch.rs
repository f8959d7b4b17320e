use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Trajectory,
    Image,
}

/// Paired observed and future sequences.
///
/// Trajectories are `[B, T, 2]` relative displacements. Image sequences are
/// channel-first, `[B, T, C, H, W]`. The optional scene is `[B, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub x: Tensor,
    pub y: Option<Tensor>,
    pub scene: Option<Tensor>,
}

impl SequenceBatch {
    pub fn new(x: Tensor, y: Option<Tensor>, scene: Option<Tensor>) -> Result<Self> {
        let kind = match x.rank() {
            3 => DataKind::Trajectory,
            5 => DataKind::Image,
            _ => return Err(Error::shape("batch", format!("observed {:?}", x.shape()))),
        };
        let b = x.shape()[0];
        if b == 0 || x.shape()[1] == 0 {
            return Err(Error::shape("batch", format!("observed {:?}", x.shape())));
        }
        if let Some(y) = &y {
            let ok = y.rank() == x.rank()
                && y.shape()[0] == b
                && y.shape()[1] > 0
                && y.shape()[2..] == x.shape()[2..];
            if !ok {
                return Err(Error::shape(
                    "batch",
                    format!("x {:?}, y {:?}", x.shape(), y.shape()),
                ));
            }
        }
        if let Some(s) = &scene {
            if s.rank() != 4 || s.shape()[0] != b {
                return Err(Error::shape("batch", format!("scene {:?}", s.shape())));
            }
        }
        if kind == DataKind::Trajectory && x.shape()[2] == 0 {
            return Err(Error::shape("batch", "zero channels"));
        }
        Ok(SequenceBatch { x, y, scene })
    }

    pub fn kind(&self) -> DataKind {
        if self.x.rank() == 3 {
            DataKind::Trajectory
        } else {
            DataKind::Image
        }
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_obs(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn t_fut(&self) -> Option<usize> {
        self.y.as_ref().map(|y| y.shape()[1])
    }

    pub fn y(&self) -> Result<&Tensor> {
        self.y.as_ref().ok_or(Error::MissingY)
    }

    /// Per-step shape, e.g. `[2]` or `[C, H, W]`.
    pub fn frame_shape(&self) -> &[usize] {
        &self.x.shape()[2..]
    }

    pub fn select(&self, idx: &[usize]) -> SequenceBatch {
        SequenceBatch {
            x: self.x.select_rows(idx),
            y: self.y.as_ref().map(|y| y.select_rows(idx)),
            scene: self.scene.as_ref().map(|s| s.select_rows(idx)),
        }
    }

    /// Examples `[start, start + len)`.
    pub fn range(&self, start: usize, len: usize) -> SequenceBatch {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select(&idx)
    }

    /// Same observations without the future.
    pub fn without_y(&self) -> SequenceBatch {
        SequenceBatch {
            y: None,
            ..self.clone()
        }
    }
}
