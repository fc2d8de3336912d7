//! Inspection question, answer rendering and ICL prompt assembly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, Corpus, ImageRecord};
use crate::selector::SelectionResult;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("product name is empty")]
    EmptyProduct,
    #[error("example image {0} is not in the corpus")]
    UnknownExample(String),
}

/// The inspection question for `product`.
pub fn build_question(product: &str) -> Result<String, PromptError> {
    if product.trim().is_empty() {
        return Err(PromptError::EmptyProduct);
    }
    Ok(format!(
        "This is an image of {product}. Does this {product} in the image have any defects? \
         If yes, please provide the anomaly mode and the bounding box coordinate of the region \
         where the defect is located. If no, please say None."
    ))
}

/// `None`, or `<mode> [x1, y1, x2, y2]` with three decimals.
pub fn render_answer(answer: &Answer) -> String {
    match answer {
        Answer::None => "None".to_string(),
        Answer::Defect { mode, bbox } => format!(
            "{mode} [{:.3}, {:.3}, {:.3}, {:.3}]",
            bbox.x1(),
            bbox.y1(),
            bbox.x2(),
            bbox.y2()
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { image_id: String, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

/// Where example answers go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerLayout {
    /// user(example, question) then assistant(answer).
    #[default]
    AssistantTurn,
    /// user(example, question, "Answer: ...") with no assistant turn.
    Inline,
}

/// Ordered multimodal conversation: examples first, query last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub messages: Vec<Message>,
}

impl PromptBundle {
    /// Id of the image in the final user message.
    pub fn query_id(&self) -> Option<&str> {
        let last = self.messages.last().filter(|m| m.role == Role::User)?;
        last.parts.iter().rev().find_map(|p| match p {
            Part::Image { image_id, .. } => Some(image_id.as_str()),
            Part::Text { .. } => None,
        })
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, &PathBuf)> {
        self.messages.iter().flat_map(|m| &m.parts).filter_map(|p| match p {
            Part::Image { image_id, path } => Some((image_id.as_str(), path)),
            Part::Text { .. } => None,
        })
    }
}

fn user_turn(rec: &ImageRecord, question: &str, extra: Option<String>) -> Message {
    let mut parts = vec![
        Part::Image {
            image_id: rec.id.clone(),
            path: rec.image_path.clone(),
        },
        Part::Text {
            text: question.to_string(),
        },
    ];
    if let Some(text) = extra {
        parts.push(Part::Text { text });
    }
    Message {
        role: Role::User,
        parts,
    }
}

/// Build the prompt for `query` with the selected examples in slot order.
pub fn assemble(
    selection: &SelectionResult,
    query: &ImageRecord,
    corpus: &Corpus,
    layout: AnswerLayout,
) -> Result<PromptBundle, PromptError> {
    let question = build_question(&query.product())?;
    let mut messages = Vec::with_capacity(2 * selection.chosen.len() + 1);
    for ex in &selection.chosen {
        let rec = corpus
            .get(&ex.image_id)
            .ok_or_else(|| PromptError::UnknownExample(ex.image_id.clone()))?;
        let answer = render_answer(&ex.answer);
        match layout {
            AnswerLayout::AssistantTurn => {
                messages.push(user_turn(rec, &question, None));
                messages.push(Message {
                    role: Role::Assistant,
                    parts: vec![Part::Text { text: answer }],
                });
            }
            AnswerLayout::Inline => messages.push(user_turn(rec, &question, Some(format!("Answer: {answer}")))),
        }
    }
    messages.push(user_turn(query, &question, None));
    Ok(PromptBundle { messages })
}
