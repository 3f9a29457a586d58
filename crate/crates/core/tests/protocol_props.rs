//! Property tests for the tag grammar and the budget ledger.

use codeloop::budget::{render_budget_report, BudgetLimits, BudgetState};
use codeloop::protocol::{parse_agent_message, render_agent_message, CodeCell, ParseOutcome, ReturnDirective};
use proptest::prelude::*;

fn normalized(lines: &[String]) -> String {
    let s = lines.join("\n");
    let s = s.trim_end_matches('\n');
    if s.is_empty() {
        String::new()
    } else {
        format!("{s}\n")
    }
}

fn cell() -> impl Strategy<Value = CodeCell> {
    ("[A-Za-z_][A-Za-z0-9_.-]{0,11}", prop::collection::vec("[a-z0-9 =+()#:'\"]{0,20}", 0..6))
        .prop_map(|(name, lines)| CodeCell { name, source: normalized(&lines) })
}

fn directive() -> impl Strategy<Value = Option<ReturnDirective>> {
    prop_oneof![
        Just(None),
        "[^<]{0,30}".prop_map(|p| Some(ReturnDirective::inline(p))),
        "[A-Za-z_][A-Za-z0-9_]{0,10}".prop_map(|v| Some(ReturnDirective::variable(v))),
    ]
}

const PIECES: &[&str] = &[
    "<turn>", "</turn>", "<code name=\"a\">", "<code name=\"b c\">", "<code name=\"\">", "</code>", "```",
    "```python", "\n", "x = 1", "<return>", "</return>", "<return var=\"ans\">", "<return var=\"1x\">",
    "<output cell=\"a\">", "text", " ", "\"", "<", ">", "é",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn render_then_parse_round_trips(cells in prop::collection::vec(cell(), 0..4), ret in directive()) {
        prop_assume!(!cells.is_empty() || ret.is_some());
        let raw = render_agent_message(&cells, ret.as_ref());
        let parsed = parse_agent_message(&raw);
        let msg = parsed.message().expect("rendered message parses");
        prop_assert_eq!(&msg.cells, &cells);
        prop_assert_eq!(&msg.return_directive, &ret);
        prop_assert!(parsed.issues().is_empty());
    }

    #[test]
    fn parse_is_total_and_stable(picks in prop::collection::vec(0..PIECES.len(), 0..30)) {
        let raw: String = picks.iter().map(|&i| PIECES[i]).collect();
        match parse_agent_message(&raw) {
            ParseOutcome::NudgeRequired { .. } => {}
            ParseOutcome::Message { message, .. } => {
                prop_assert!(!message.cells.is_empty() || message.return_directive.is_some());
                // re-rendering what was understood is understood the same way
                let again = parse_agent_message(&render_agent_message(&message.cells, message.return_directive.as_ref()));
                let m2 = again.message().unwrap();
                prop_assert_eq!(&m2.cells, &message.cells);
                prop_assert_eq!(&m2.return_directive, &message.return_directive);
            }
        }
    }

    #[test]
    fn budget_report_identities(charges in prop::collection::vec((0u64..800, 0.0f64..12.0, 0u32..=1), 1..20)) {
        let limits = BudgetLimits::default();
        let mut s = BudgetState::new();
        for (tok, secs, turns) in charges {
            s = s.charge(tok, secs, turns);
            if s.is_exhausted(&limits) {
                break;
            }
            let r = render_budget_report(&s, &limits);
            let nums: Vec<i64> = r
                .split(|c: char| !c.is_ascii_digit() && c != '-')
                .filter_map(|w| w.parse().ok())
                .collect();
            let [used_s, left_s, used_t, left_t, done, left] = nums[..] else { panic!("{r}") };
            prop_assert_eq!(used_t + left_t, 16_000);
            prop_assert_eq!(done + left, 10);
            prop_assert_eq!(used_s, s.time_used.floor() as i64);
            prop_assert_eq!(left_s, (240.0 - s.time_used).floor() as i64);
            // floors of complementary reals sum to the cap, or one less
            let expect = if s.time_used.fract() == 0.0 { 240 } else { 239 };
            prop_assert_eq!(used_s + left_s, expect);
        }
    }
}
