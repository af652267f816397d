use emgf::data::{label_counts, load_dataset, Polarity};
use emgf::synth::{generate, lexicon_baseline, lexicon_path, write, Lexicon, SynthOptions, KGE_WIDTH};
use proptest::prelude::*;

/// Reads the label off the dependency arcs: the last aspect token hangs from
/// its opinion word.
fn head_oracle(inst: &emgf::data::AspectInstance, lex: &Lexicon) -> Option<Polarity> {
    let last = inst.aspect().1 - 1;
    let head = inst.dep_heads()[last];
    (head > 0).then(|| lex.polarity(&inst.tokens()[head - 1])).flatten()
}

#[test]
fn written_files_round_trip_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions::default();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let data = write(&opts, &a).unwrap();
    write(&opts, &b).unwrap();
    assert_eq!(load_dataset(&a).unwrap(), data);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(lexicon_path(&a)).unwrap(),
        std::fs::read(lexicon_path(&b)).unwrap()
    );
    assert_eq!(label_counts(&data), [22, 21, 21]);
}

#[test]
fn lexicon_file_lists_every_opinion_word() {
    let (_, lex) = generate(&SynthOptions::default()).unwrap();
    let tsv = lex.to_tsv();
    for line in tsv.lines() {
        let (w, p) = line.split_once('\t').unwrap();
        assert_eq!(lex.polarity(w).unwrap().to_string(), p);
    }
    assert_eq!(tsv.lines().count(), lex.opinions.iter().map(Vec::len).sum::<usize>());
}

#[test]
fn bad_options_are_rejected() {
    let bad = [
        SynthOptions { instances: 0, ..SynthOptions::default() },
        SynthOptions { vocab: 4, ..SynthOptions::default() },
        SynthOptions { two_clause_prob: 1.5, ..SynthOptions::default() },
    ];
    for o in bad {
        assert!(generate(&o).is_err(), "{o:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn planted_labels_are_recoverable(seed in any::<u64>(), vocab in 5usize..80, two in 0.0f64..=1.0) {
        let opts = SynthOptions { instances: 30, vocab, seed, with_kge: true, two_clause_prob: two };
        let (data, lex) = generate(&opts).unwrap();
        for inst in &data {
            prop_assert_eq!(head_oracle(inst, &lex), Some(inst.polarity()));
            prop_assert_eq!(lexicon_baseline(inst, &lex), inst.polarity());
            let kge = inst.kge().unwrap();
            prop_assert!(kge.iter().all(|v| v.len() == KGE_WIDTH && v.iter().any(|x| *x != 0.0)));
        }
    }

    #[test]
    fn no_kge_when_disabled(seed in any::<u64>()) {
        let opts = SynthOptions { instances: 5, seed, with_kge: false, ..SynthOptions::default() };
        prop_assert!(generate(&opts).unwrap().0.iter().all(|i| i.kge().is_none()));
    }
}
