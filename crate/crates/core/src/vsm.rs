//! VSM13 survey model: questions, Likert response aggregation, the six
//! cultural-dimension scores and the L1 fitness against a target profile.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of VSM13 content questions.
pub const QUESTION_COUNT: usize = 24;

#[derive(Debug, Error)]
pub enum VsmError {
    #[error("MissingQuestion: {0}")]
    MissingQuestion(u8),
    #[error("DuplicateQuestion: {0}")]
    DuplicateQuestion(u8),
    #[error("UnknownQuestion: {0} (expected 1..=24)")]
    UnknownQuestion(u8),
    #[error("OutOfScale: question {question} response {value} outside [{min}, {max}]")]
    OutOfScale {
        question: u8,
        value: f64,
        min: u8,
        max: u8,
    },
    #[error("InvalidScale: question {question} has scale [{min}, {max}]")]
    InvalidScale { question: u8, min: u8, max: u8 },
    #[error("NonFinite: {0} must be finite")]
    NonFinite(String),
    #[error("dataset parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("dataset io error: {0}")]
    Io(#[from] std::io::Error),
}

fn default_scale_min() -> u8 {
    1
}

fn default_scale_max() -> u8 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub index: u8,
    pub text: String,
    #[serde(default = "default_scale_min")]
    pub scale_min: u8,
    #[serde(default = "default_scale_max")]
    pub scale_max: u8,
}

impl SurveyQuestion {
    pub fn new(index: u8, text: impl Into<String>) -> Self {
        Self {
            index,
            text: text.into(),
            scale_min: 1,
            scale_max: 5,
        }
    }

    pub fn midpoint(&self) -> f64 {
        (f64::from(self.scale_min) + f64::from(self.scale_max)) / 2.0
    }

    fn contains(&self, value: f64) -> bool {
        value >= f64::from(self.scale_min) && value <= f64::from(self.scale_max)
    }
}

/// The six VSM13 dimensions, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimension {
    Pdi,
    Idv,
    Mas,
    Uai,
    Lto,
    Ivr,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Pdi,
        Dimension::Idv,
        Dimension::Mas,
        Dimension::Uai,
        Dimension::Lto,
        Dimension::Ivr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Pdi => "PDI",
            Dimension::Idv => "IDV",
            Dimension::Mas => "MAS",
            Dimension::Uai => "UAI",
            Dimension::Lto => "LTO",
            Dimension::Ivr => "IVR",
        }
    }

    /// The two weighted question pairs defining this dimension:
    /// `w1 * (mu[a1] - mu[b1]) + w2 * (mu[a2] - mu[b2])`.
    pub fn terms(self) -> [DimensionTerm; 2] {
        let t = |weight, plus, minus| DimensionTerm { weight, plus, minus };
        match self {
            Dimension::Pdi => [t(35.0, 7, 2), t(25.0, 20, 23)],
            Dimension::Idv => [t(35.0, 4, 1), t(35.0, 9, 6)],
            Dimension::Mas => [t(35.0, 5, 3), t(25.0, 8, 10)],
            Dimension::Uai => [t(40.0, 18, 15), t(25.0, 21, 24)],
            Dimension::Lto => [t(40.0, 13, 14), t(25.0, 19, 22)],
            Dimension::Ivr => [t(35.0, 12, 11), t(40.0, 17, 16)],
        }
    }

    /// Largest attainable `|score - constant|` for means on a 1..=5 scale.
    pub fn max_deviation(self) -> f64 {
        self.terms().iter().map(|t| t.weight * 4.0).sum()
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionTerm {
    pub weight: f64,
    pub plus: u8,
    pub minus: u8,
}

/// Scores on the six dimensions. Also used for target profiles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CulturalDimensions {
    pub pdi: f64,
    pub idv: f64,
    pub mas: f64,
    pub uai: f64,
    pub lto: f64,
    pub ivr: f64,
}

impl CulturalDimensions {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            pdi: v[0],
            idv: v[1],
            mas: v[2],
            uai: v[3],
            lto: v[4],
            ivr: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.pdi, self.idv, self.mas, self.uai, self.lto, self.ivr]
    }

    pub fn get(&self, dim: Dimension) -> f64 {
        self.to_array()[dim as usize]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Per-dimension additive offsets. Zero unless the dataset says otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DimensionConstants {
    #[serde(default)]
    pub pdi: f64,
    #[serde(default)]
    pub idv: f64,
    #[serde(default)]
    pub mas: f64,
    #[serde(default)]
    pub uai: f64,
    #[serde(default)]
    pub lto: f64,
    #[serde(default)]
    pub ivr: f64,
}

impl DimensionConstants {
    pub const ZERO: DimensionConstants = DimensionConstants {
        pdi: 0.0,
        idv: 0.0,
        mas: 0.0,
        uai: 0.0,
        lto: 0.0,
        ivr: 0.0,
    };

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            pdi: v[0],
            idv: v[1],
            mas: v[2],
            uai: v[3],
            lto: v[4],
            ivr: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.pdi, self.idv, self.mas, self.uai, self.lto, self.ivr]
    }
}

/// Likert responses grouped by question, with their per-question means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseSet {
    per_question: BTreeMap<u8, Vec<f64>>,
    means: BTreeMap<u8, f64>,
}

impl ResponseSet {
    pub fn responses(&self, question: u8) -> &[f64] {
        self.per_question
            .get(&question)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Mean response of `question`. Panics if the index is outside 1..=24.
    pub fn mean(&self, question: u8) -> f64 {
        self.means[&question]
    }

    pub fn means(&self) -> &BTreeMap<u8, f64> {
        &self.means
    }

    pub fn per_question(&self) -> &BTreeMap<u8, Vec<f64>> {
        &self.per_question
    }

    pub fn total_responses(&self) -> usize {
        self.per_question.values().map(Vec::len).sum()
    }
}

/// Groups raw `(question_index, response)` pairs and computes per-question means.
///
/// Every question 1..=24 must receive at least one response, and each response
/// must lie on its question's scale.
pub fn aggregate_responses<I>(questions: &[SurveyQuestion], raw: I) -> Result<ResponseSet, VsmError>
where
    I: IntoIterator<Item = (u8, f64)>,
{
    let mut per_question: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (index, value) in raw {
        let question = questions
            .iter()
            .find(|q| q.index == index)
            .ok_or(VsmError::UnknownQuestion(index))?;
        if !question.contains(value) {
            return Err(VsmError::OutOfScale {
                question: index,
                value,
                min: question.scale_min,
                max: question.scale_max,
            });
        }
        per_question.entry(index).or_default().push(value);
    }

    let mut means = BTreeMap::new();
    for index in 1..=QUESTION_COUNT as u8 {
        let values = per_question
            .get(&index)
            .filter(|v| !v.is_empty())
            .ok_or(VsmError::MissingQuestion(index))?;
        means.insert(index, values.iter().sum::<f64>() / values.len() as f64);
    }
    Ok(ResponseSet {
        per_question,
        means,
    })
}

/// Scores the six dimensions from question means as weighted differences
/// plus the per-dimension constant.
pub fn compute_dimensions(rs: &ResponseSet, c: &DimensionConstants) -> CulturalDimensions {
    let constants = c.to_array();
    let mut out = [0.0; 6];
    for (slot, dim) in Dimension::ALL.into_iter().enumerate() {
        let [a, b] = dim.terms();
        out[slot] = a.weight * (rs.mean(a.plus) - rs.mean(a.minus))
            + b.weight * (rs.mean(b.plus) - rs.mean(b.minus))
            + constants[slot];
    }
    CulturalDimensions::from_array(out)
}

/// Mean absolute difference over the six dimensions.
pub fn l1_fitness(d: &CulturalDimensions, target: &CulturalDimensions) -> f64 {
    let d = d.to_array();
    let t = target.to_array();
    d.iter().zip(t.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 6.0
}

/// The survey instrument plus the country profile it is scored against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurveyDataset {
    questions: Vec<SurveyQuestion>,
    pub country_code: String,
    pub target: CulturalDimensions,
    pub constants: DimensionConstants,
}

/// On-disk JSON layout of a dataset, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub country_code: String,
    pub target: CulturalDimensions,
    #[serde(default)]
    pub constants: DimensionConstants,
    pub questions: Vec<SurveyQuestion>,
}

impl DatasetFile {
    /// Every problem with the file, in a stable order. Empty when valid.
    pub fn diagnostics(&self) -> Vec<VsmError> {
        let mut out = Vec::new();
        let mut seen = [false; QUESTION_COUNT + 1];
        for q in &self.questions {
            let idx = q.index as usize;
            if idx == 0 || idx > QUESTION_COUNT {
                out.push(VsmError::UnknownQuestion(q.index));
                continue;
            }
            if seen[idx] {
                out.push(VsmError::DuplicateQuestion(q.index));
            }
            seen[idx] = true;
            if q.scale_min < 1 || q.scale_min >= q.scale_max {
                out.push(VsmError::InvalidScale {
                    question: q.index,
                    min: q.scale_min,
                    max: q.scale_max,
                });
            }
        }
        for (idx, present) in seen.iter().enumerate().skip(1) {
            if !present {
                out.push(VsmError::MissingQuestion(idx as u8));
            }
        }
        if !self.target.is_finite() {
            out.push(VsmError::NonFinite("target".into()));
        }
        if !self.constants.to_array().iter().all(|c| c.is_finite()) {
            out.push(VsmError::NonFinite("constants".into()));
        }
        out
    }
}

impl TryFrom<DatasetFile> for SurveyDataset {
    type Error = VsmError;

    fn try_from(file: DatasetFile) -> Result<Self, VsmError> {
        if let Some(err) = file.diagnostics().into_iter().next() {
            return Err(err);
        }
        let mut questions = file.questions;
        questions.sort_by_key(|q| q.index);
        Ok(SurveyDataset {
            questions,
            country_code: file.country_code,
            target: file.target,
            constants: file.constants,
        })
    }
}

impl SurveyDataset {
    pub fn new(
        questions: Vec<SurveyQuestion>,
        country_code: impl Into<String>,
        target: CulturalDimensions,
        constants: DimensionConstants,
    ) -> Result<Self, VsmError> {
        DatasetFile {
            country_code: country_code.into(),
            target,
            constants,
            questions,
        }
        .try_into()
    }

    /// A 24-question dataset with the right index structure and stand-in
    /// wording. Real VSM13 question texts must be supplied by the user.
    pub fn placeholder() -> Self {
        let questions = (1..=QUESTION_COUNT as u8)
            .map(|i| SurveyQuestion::new(i, format!("Placeholder for VSM13 content question {i}.")))
            .collect();
        Self::new(
            questions,
            "CN",
            CulturalDimensions::default(),
            DimensionConstants::ZERO,
        )
        .expect("placeholder dataset is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, VsmError> {
        serde_json::from_str::<DatasetFile>(s)?.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VsmError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Questions ordered by index 1..=24.
    pub fn questions(&self) -> &[SurveyQuestion] {
        &self.questions
    }

    pub fn question(&self, index: u8) -> Option<&SurveyQuestion> {
        self.questions.get(usize::from(index).checked_sub(1)?)
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            country_code: self.country_code.clone(),
            target: self.target,
            constants: self.constants,
            questions: self.questions.clone(),
        }
    }
}
