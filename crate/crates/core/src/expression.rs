use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Expression label vocabulary, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expression {
    Angry,
    Contempt,
    Disgust,
    Fear,
    Happy,
    Neutral,
    Sad,
    Surprise,
}

impl Expression {
    pub const ALL: [Expression; 8] = [
        Expression::Angry,
        Expression::Contempt,
        Expression::Disgust,
        Expression::Fear,
        Expression::Happy,
        Expression::Neutral,
        Expression::Sad,
        Expression::Surprise,
    ];

    /// The seven classes shared by every dataset (no Contempt).
    pub const SEVEN: [Expression; 7] = [
        Expression::Angry,
        Expression::Disgust,
        Expression::Fear,
        Expression::Happy,
        Expression::Neutral,
        Expression::Sad,
        Expression::Surprise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Expression::Angry => "Angry",
            Expression::Contempt => "Contempt",
            Expression::Disgust => "Disgust",
            Expression::Fear => "Fear",
            Expression::Happy => "Happy",
            Expression::Neutral => "Neutral",
            Expression::Sad => "Sad",
            Expression::Surprise => "Surprise",
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Expression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Expression::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownExpression(s.to_string()))
    }
}

/// Parses a comma-separated class list.
pub fn parse_class_list(s: &str) -> Result<Vec<Expression>, Error> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

pub fn format_class_list(classes: &[Expression]) -> String {
    classes.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
}
