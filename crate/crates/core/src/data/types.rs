use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{AudioFeatureSequence, ImageTensor};

/// Axis-aligned box in original-image pixel coordinates. Pixel `(x, y)` is
/// inside when `x1 <= x < x2` and `y1 <= y < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BBox {
    /// Returns `None` unless `x1 < x2` and `y1 < y2`.
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Option<Self> {
        (x1 < x2 && y1 < y2).then_some(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.x2 <= width && self.y2 <= height
    }

    /// Twice the centre, so comparisons stay in integers.
    pub(crate) fn centre2(&self) -> (i64, i64) {
        (
            self.x1 as i64 + self.x2 as i64,
            self.y1 as i64 + self.y2 as i64,
        )
    }
}

/// Renders as `{x1, y1, x2, y2}`, the form embedded in responses.
impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}, {}, {}}}", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Reasoning level of an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionType {
    Conversation,
    SimpleReasoning,
    ComplexReasoning,
}

impl InstructionType {
    pub const ALL: [InstructionType; 3] = [
        InstructionType::Conversation,
        InstructionType::SimpleReasoning,
        InstructionType::ComplexReasoning,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InstructionType::Conversation => "conversation",
            InstructionType::SimpleReasoning => "simple_reasoning",
            InstructionType::ComplexReasoning => "complex_reasoning",
        }
    }

    /// Label used in report tables.
    pub fn title(&self) -> &'static str {
        match self {
            InstructionType::Conversation => "Conversation",
            InstructionType::SimpleReasoning => "Simple reasoning",
            InstructionType::ComplexReasoning => "Complex reasoning",
        }
    }
}

impl fmt::Display for InstructionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for InstructionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conversation" | "conv" => Ok(InstructionType::Conversation),
            "simple_reasoning" | "simple" => Ok(InstructionType::SimpleReasoning),
            "complex_reasoning" | "complex" => Ok(InstructionType::ComplexReasoning),
            other => Err(format!("unknown instruction type `{other}`")),
        }
    }
}

/// One multimodal example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    /// `(width, height)` of the original image.
    pub image_size: (u32, u32),
    pub instruction_text: String,
    pub instruction_type: InstructionType,
    pub audio_features: AudioFeatureSequence,
    pub response_text: String,
    pub bbox: Option<BBox>,
}
