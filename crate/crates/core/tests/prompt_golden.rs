//! Byte-exact prompt fixtures and rendering properties.

use proptest::prelude::*;
use treegen::prompt::{
    render_answer_prompt, render_continuation_prompt, render_question_prompt, strip_completion, Turn,
};
use treegen::{ChatTemplate, LayerSpec, Role};

const SYSTEM: &str = "You are a helpful assistant.";
const Q1: &str = "What is the capital of France?";
const R1: &str = "The capital of France is Paris.";
const PT_ROOT: &str = "Here are some useful world knowledge:";

fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn llama2_fixtures() {
    let t = ChatTemplate::llama2_chat();
    let q = Turn::new(Role::Question, Q1);
    let r = Turn::new(Role::Answer, R1);
    assert_eq!(render_question_prompt(&[], &t, SYSTEM).unwrap(), fixture("llama2_p1.txt"));
    assert_eq!(render_answer_prompt(&[q], &t, SYSTEM).unwrap(), fixture("llama2_p2.txt"));
    assert_eq!(render_question_prompt(&[q, r], &t, SYSTEM).unwrap(), fixture("llama2_p3.txt"));
}

#[test]
fn continuation_fixtures() {
    let sep = &ChatTemplate::plain().turn_separator;
    assert_eq!(render_continuation_prompt(&[], PT_ROOT, sep).unwrap(), fixture("pt_p1.txt"));
    let path = [
        Turn::new(Role::Continuation, "Water boils at 100 degrees Celsius at sea level."),
        Turn::new(Role::Continuation, "It freezes at 0 degrees."),
    ];
    assert_eq!(render_continuation_prompt(&path, PT_ROOT, sep).unwrap(), fixture("pt_p3.txt"));
}

fn words() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,8}){0,5}"
}

fn dialogue() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(words(), 0..8)
}

fn turns(texts: &[String]) -> Vec<Turn<'_>> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Turn::new(if i % 2 == 0 { Role::Question } else { Role::Answer }, t))
        .collect()
}

fn render(path: &[Turn<'_>], t: &ChatTemplate, system: &str) -> String {
    if path.len().is_multiple_of(2) {
        render_question_prompt(path, t, system).unwrap()
    } else {
        render_answer_prompt(path, t, system).unwrap()
    }
}

proptest! {
    #[test]
    fn each_prompt_extends_the_previous(texts in dialogue(), system in words()) {
        let t = ChatTemplate::llama2_chat();
        let all = turns(&texts);
        for n in 1..=all.len() {
            let shorter = render(&all[..n - 1], &t, &system);
            let longer = render(&all[..n], &t, &system);
            prop_assert!(longer.starts_with(&shorter), "{shorter:?} / {longer:?}");
        }
    }

    #[test]
    fn marker_counts(texts in dialogue(), system in words()) {
        let t = ChatTemplate::llama2_chat();
        let all = turns(&texts);
        let p = render(&all, &t, &system);
        let i = all.len() / 2;
        // Every prompt has opened one more user turn than it has answers.
        prop_assert_eq!(p.matches("[INST]").count(), i + 1);
        prop_assert_eq!(p.matches("[/INST]").count(), all.len() - i);
        prop_assert_eq!(p.matches("<<SYS>>").count(), 1);
        prop_assert_eq!(p.matches("</s>").count(), i);
    }

    #[test]
    fn continuation_prompts_carry_no_markers(texts in dialogue(), system in words()) {
        let path: Vec<Turn<'_>> = texts.iter().map(|t| Turn::new(Role::Continuation, t)).collect();
        let p = render_continuation_prompt(&path, &system, " ").unwrap();
        for piece in ChatTemplate::llama2_chat().marker_pieces() {
            prop_assert!(!p.contains(piece));
        }
    }

    #[test]
    fn stripped_text_has_no_marker_pieces(body in words(), tail in words()) {
        let t = ChatTemplate::llama2_chat();
        let raw = format!("  {body} </s><s>[INST] {tail}");
        let layer = LayerSpec::new(1, 8, Role::Answer);
        let out = strip_completion(&raw, &layer, &t).unwrap();
        prop_assert_eq!(out, body);
    }
}
