use serde::{Deserialize, Serialize};

use super::DocumentSection;

/// How section content is rendered into a prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormattingMode {
    /// Content verbatim, bullet lists intact.
    #[default]
    PreserveBullets,
    /// Each run of bullet lines folded into one comma-separated sentence.
    CommaJoined,
}

const BULLET_MARKERS: [&str; 3] = ["- ", "* ", "• "];

pub fn render_content(section: &DocumentSection, mode: FormattingMode) -> String {
    render_text(&section.content, mode)
}

pub fn render_text(content: &str, mode: FormattingMode) -> String {
    match mode {
        FormattingMode::PreserveBullets => content.to_string(),
        FormattingMode::CommaJoined => comma_join(content),
    }
}

fn bullet_item(line: &str) -> Option<&str> {
    let body = line.trim_start();
    BULLET_MARKERS.iter().find_map(|m| body.strip_prefix(m))
}

fn comma_join(content: &str) -> String {
    if !content.lines().any(|l| bullet_item(l).is_some()) {
        return content.to_string();
    }
    let mut out: Vec<String> = Vec::new();
    let mut lines = content.lines().peekable();
    while let Some(line) = lines.next() {
        let Some(first) = bullet_item(line) else {
            out.push(line.to_string());
            continue;
        };
        let mut items = vec![clean_item(first)];
        while let Some(item) = lines.peek().and_then(|l| bullet_item(l)) {
            items.push(clean_item(item));
            lines.next();
        }
        items.retain(|i| !i.is_empty());
        if items.is_empty() {
            continue;
        }
        let run = format!("{}.", items.join(", "));
        match out.last_mut() {
            Some(prev) if !prev.trim().is_empty() => {
                let kept = prev.trim_end().len();
                prev.truncate(kept);
                prev.push(' ');
                prev.push_str(&run);
            }
            _ => out.push(run),
        }
    }
    out.join("\n")
}

fn clean_item(item: &str) -> String {
    let mut text = item.trim();
    // Nested markers such as "- - x" collapse to the innermost text.
    while let Some(inner) = BULLET_MARKERS.iter().find_map(|m| text.strip_prefix(m)) {
        text = inner.trim_start();
    }
    text.trim_end_matches(['.', ',', ';']).trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn folds_bullets_into_a_sentence() {
        let content = "Never park:\n- In an unmarked crosswalk\n- In a bicycle lane";
        assert_eq!(
            render_text(content, FormattingMode::CommaJoined),
            "Never park: In an unmarked crosswalk, In a bicycle lane."
        );
        assert_eq!(render_text(content, FormattingMode::PreserveBullets), content);
    }

    #[test]
    fn bullet_free_text_is_untouched() {
        let content = "Slow down in work zones.\nFines can be doubled.\n";
        assert_eq!(render_text(content, FormattingMode::CommaJoined), content);
    }

    #[test]
    fn handles_mixed_markers_indentation_and_trailing_text() {
        let content = "Lights:\n  * Red means stop.\n\t• Green means go;\nAfter the list.\n\n- Leading run\n- second";
        assert_eq!(
            render_text(content, FormattingMode::CommaJoined),
            "Lights: Red means stop, Green means go.\nAfter the list.\n\nLeading run, second."
        );
    }

    proptest! {
        #[test]
        fn rendering_is_idempotent(
            lines in prop::collection::vec(
                prop_oneof!["[A-Za-z ,.:]{0,20}", "(- |\\* |• |  - )[A-Za-z ,.-]{0,15}"],
                0..10,
            )
        ) {
            let content = lines.join("\n");
            for mode in [FormattingMode::PreserveBullets, FormattingMode::CommaJoined] {
                let once = render_text(&content, mode);
                prop_assert_eq!(render_text(&once, mode), once.clone());
            }
            let folded = render_text(&content, FormattingMode::CommaJoined);
            prop_assert!(folded.lines().all(|l| bullet_item(l).is_none()), "{:?}", folded);
        }
    }
}
