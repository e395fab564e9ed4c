//! The worked few-shot example used throughout tests and documentation.

use crate::event::{ArgKind, SdohEvent, SdohType, Span};

/// Social-history note with three annotated events. A double space
/// follows the first sentence so the published character offsets hold.
pub const PROMPT2_NOTE: &str = "SOCIAL HISTORY:  Patient lives alone in [**Hospital1 **].  She has a daughter who lives five minutes away.  The patient does all of her own cooking and cleaning.  She has no history of alcohol abuse.  She quit smoking 30 years ago. She is a widow.";

/// The same note with single spacing: the Tobacco and Alcohol offsets
/// below are one character too far right against this text.
pub const PROMPT2_NOTE_SHIFTED: &str = "SOCIAL HISTORY:  Patient lives alone in [**Hospital1 **]. She has a daughter who lives five minutes away.  The patient does all of her own cooking and cleaning.  She has no history of alcohol abuse.  She quit smoking 30 years ago. She is a widow.";

/// Annotations block for [`PROMPT2_NOTE`], in the tuple dialect.
pub const PROMPT2_ANNOTATIONS: &str = r#"[
  {
    "sdoh": "LivingStatus",
    "trigger": (25, 30, "lives"),
    "status": (25, 30, "lives", "current"),
    "type": (31, 56, "alone in [**Hospital1 **]", "with_others")},
  {
    "sdoh": "Tobacco",
    "trigger": (210, 217, "smoking"),
    "status": (205, 209, "quit", "past"),
    "history": (218, 230, "30 years ago")},
  {
    "sdoh": "Alcohol",
    "trigger": (185, 198, "alcohol abuse"),
    "status": (171, 181, "no history", "none")}
]"#;

pub fn prompt2_gold() -> Vec<SdohEvent> {
    vec![
        SdohEvent::new(SdohType::LivingStatus, Span::new(25, 30, "lives"))
            .with_status(Span::new(25, 30, "lives"), "current")
            .with_type(Span::new(31, 56, "alone in [**Hospital1 **]"), Some("with_others")),
        SdohEvent::new(SdohType::Tobacco, Span::new(210, 217, "smoking"))
            .with_status(Span::new(205, 209, "quit"), "past")
            .with_span(ArgKind::History, Span::new(218, 230, "30 years ago")),
        SdohEvent::new(SdohType::Alcohol, Span::new(185, 198, "alcohol abuse"))
            .with_status(Span::new(171, 181, "no history"), "none"),
    ]
}
