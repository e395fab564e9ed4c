//! Property-based invariants across codec, standoff, scorer, voting and
//! post-processing.

use proptest::prelude::*;

use sdoh_core::brat::{events_to_brat, brat_to_events, parse_brat, serialize_brat, RoleMap};
use sdoh_core::codec::{parse_response, render_events_as, Dialect};
use sdoh_core::event::{validate_event, LabeledArg, LIVING_TYPE_VALUES};
use sdoh_core::pipeline::{compile_majority, post_process, realign_span, ConsistencyConfig, PostProcessConfig, VoteLedger};
use sdoh_core::scorer::score_document;
use sdoh_core::{ArgKind, SdohEvent, SdohType, Span};

fn note_strategy() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof!["[a-z]{1,8}", "[A-Z][a-z]{0,5}", Just("café".to_string()), Just("\"q\"".into()), Just("🙂".into())], 4..30)
        .prop_map(|w| w.join(" "))
}

fn span_in(note: &str) -> impl Strategy<Value = Span> {
    let chars: Vec<char> = note.chars().collect();
    let n = chars.len();
    (0..n, 1usize..10).prop_map(move |(s, len)| {
        let e = (s + len).min(n);
        Span::new(s, e, chars[s..e].iter().collect::<String>())
    })
}

/// Schema-valid events over `note`; indices select labels and optional args.
fn events_in(note: String) -> impl Strategy<Value = (String, Vec<SdohEvent>)> {
    let one = (
        0usize..5,
        span_in(&note),
        span_in(&note),
        0usize..5,
        proptest::option::of(span_in(&note)),
        proptest::collection::vec(proptest::option::of(span_in(&note)), 5),
    )
        .prop_map(|(t, trig, stat, v, ty, opts)| {
            let sdoh = SdohType::ALL[t];
            let values = sdoh.status_values();
            let mut e = SdohEvent::new(sdoh, trig.clone()).with_status(stat, values[v % values.len()]);
            if sdoh == SdohType::LivingStatus {
                e = e.with_type(ty.unwrap_or(trig), Some(LIVING_TYPE_VALUES[v % 4]));
            } else if let Some(ty) = ty {
                e = e.with_type(ty, None);
            }
            for (kind, span) in ArgKind::SPAN_ONLY.into_iter().zip(opts) {
                if let (true, Some(span)) = (sdoh.permits(kind), span) {
                    e = e.with_span(kind, span);
                }
            }
            e
        });
    (Just(note), proptest::collection::vec(one, 0..6))
}

fn note_and_events() -> impl Strategy<Value = (String, Vec<SdohEvent>)> {
    note_strategy().prop_flat_map(events_in)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rendered_lists_parse_back((_note, events) in note_and_events(), json in any::<bool>()) {
        let dialect = if json { Dialect::Json } else { Dialect::Tuple };
        let report = parse_response(&render_events_as(&events, dialect)).unwrap();
        prop_assert_eq!(report.events, events);
    }

    #[test]
    fn events_survive_standoff_conversion((note, events) in note_and_events()) {
        // one event per key, as a standoff file cannot hold duplicates
        let mut unique: Vec<SdohEvent> = Vec::new();
        for e in events {
            if !unique.iter().any(|u| u.key() == e.key()) {
                unique.push(e);
            }
        }
        let roles = RoleMap::default();
        let doc = events_to_brat(&unique, &note, &roles).unwrap();
        let reparsed = parse_brat(&serialize_brat(&doc), &note).unwrap();
        let mut back = brat_to_events(&reparsed, &note, &roles).unwrap();
        back.sort_by_key(|e| e.key());
        unique.sort_by_key(|e| e.key());
        prop_assert_eq!(back, unique);
    }

    #[test]
    fn self_score_is_perfect((_note, events) in note_and_events()) {
        let table = score_document(&events, &events);
        let m = table.total();
        prop_assert_eq!(m.fp + m.fn_, 0);
        let present: usize = events.iter().map(|e| e.present_kinds().count()).sum();
        prop_assert_eq!(m.tp as usize, present);
    }

    #[test]
    fn scoring_is_symmetric_under_swap((_n1, a) in note_and_events(), (_n2, b) in note_and_events()) {
        prop_assert_eq!(score_document(&a, &b), score_document(&b, &a).swapped());
    }

    #[test]
    fn compiled_events_come_from_keys_with_enough_votes(
        samples in proptest::collection::vec(note_and_events(), 1..5),
        t in 1usize..5,
    ) {
        let samples: Vec<Vec<SdohEvent>> = samples.into_iter().map(|(_, e)| e).collect();
        let k = samples.len();
        let t = t.min(k);
        let ledger = VoteLedger::build(&samples);
        let out = compile_majority(&ledger, &ConsistencyConfig::new(k, Some(t)).unwrap());
        for e in &out {
            prop_assert!(ledger.votes(&e.key()) >= t);
        }
        let mut keys: Vec<_> = out.iter().map(SdohEvent::key).collect();
        let before = keys.len();
        keys.dedup();
        prop_assert_eq!(keys.len(), before);
    }

    #[test]
    fn post_processing_emits_only_valid_events(
        (note, events) in note_and_events(),
        shifts in proptest::collection::vec(0usize..3, 6),
        status in prop_oneof![Just("current"), Just("CURRENT"), Just("unknown"), Just("employed"), Just("")],
    ) {
        let mut noisy = events.clone();
        for (e, d) in noisy.iter_mut().zip(shifts) {
            e.trigger.start += d;
            e.trigger.end += d;
            if d == 2 {
                e.status = Some(LabeledArg::new(e.trigger.clone(), Some(status)));
            }
        }
        let (filtered, _) = post_process(&noisy, &note, &PostProcessConfig::default());
        for e in &filtered.kept {
            prop_assert!(validate_event(e, &note).is_valid(), "{:?}", e);
        }
        prop_assert_eq!(filtered.kept.len() + filtered.dropped.len(), noisy.len());
        // valid input is left untouched
        let (clean, _) = post_process(&events, &note, &PostProcessConfig::default());
        prop_assert_eq!(clean.kept, events);
    }

    #[test]
    fn realigned_spans_match_the_note((note, events) in note_and_events(), shift in 0usize..4) {
        let chars: Vec<char> = note.chars().collect();
        for e in events.iter().filter(|e| !e.trigger.text.trim().is_empty()) {
            let moved = Span::new(e.trigger.start + shift, e.trigger.end + shift, e.trigger.text.clone());
            let fixed = realign_span(&moved, &chars).expect("text occurs in the note");
            prop_assert!(fixed.check(&note).is_ok());
            prop_assert_eq!(&fixed.text, e.trigger.text.trim());
        }
    }

    #[test]
    fn standoff_parser_never_panics(ann in "(T[0-9]{1,2}\t[A-Za-z]{1,8} [0-9]{1,3} [0-9]{1,3}\t[a-z ]{0,6}\n|E[0-9]\t[A-Za-z:T0-9 ]{0,20}\n|A[0-9]\t[A-Za-z0-9 ]{0,20}\n|.{0,10}\n){0,8}") {
        let _ = parse_brat(&ann, "quit smoking 30 years ago, drinks socially");
    }
}
