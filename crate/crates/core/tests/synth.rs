use micap::encoders::CHANNELS;
use micap::synth::render::{circle_radius, BACKGROUND};
use micap::synth::{
    color_centroid, compatible, generate_dataset, grammar_vocabulary, read_archive, render_frames,
    sample_rng, write_archive, Action, Color, DatasetSpec, Event, Motion, Split, Subject,
    ARCHIVE_VERSION,
};
use proptest::prelude::*;

fn small(count: usize, seed: u64) -> DatasetSpec {
    let mut s = DatasetSpec::new(count, seed);
    s.test_count = count / 4;
    s
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = generate_dataset(&small(12, 3)).unwrap();
    let b = generate_dataset(&small(12, 3)).unwrap();
    let c = generate_dataset(&small(12, 4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.blobs(), c.blobs());
}

#[test]
fn samples_are_independent_of_dataset_size() {
    let a = generate_dataset(&DatasetSpec::new(5, 9)).unwrap();
    let b = generate_dataset(&DatasetSpec::new(9, 9)).unwrap();
    for i in 0..5 {
        assert_eq!(a.frames(i), b.frames(i));
        assert_eq!(a.sample(i).video_caption, b.sample(i).video_caption);
    }
}

#[test]
fn manifest_describes_the_clips() {
    let spec = small(8, 1);
    let data = generate_dataset(&spec).unwrap();
    let m = data.manifest();
    assert_eq!(m.version, ARCHIVE_VERSION);
    assert_eq!(
        (m.t, m.h, m.w, m.c, m.s),
        (
            spec.frames,
            spec.height,
            spec.width,
            CHANNELS,
            spec.audio_len
        )
    );
    assert_eq!(data.split_indices(Split::Test), vec![6, 7]);
    for i in 0..data.len() {
        let s = data.sample(i);
        assert_eq!(
            s.frame_len as usize,
            spec.frames * spec.height * spec.width * CHANNELS
        );
        assert_eq!(s.references[0], s.video_caption);
        let event = s.event.expect("generated samples record their event");
        assert_eq!(event.video_caption(), s.video_caption);
        assert!(s.audio_caption.contains(event.subject.word()));
        assert!(!s.audio_caption.contains(event.color.word()));
        let ex = data.example(i).unwrap();
        assert!(ex.caption.iter().all(|&t| t < data.vocab().len()));
        assert_eq!(data.vocab().detokenize(&ex.caption), s.video_caption);
    }
}

#[test]
fn every_grammar_word_is_in_the_vocabulary() {
    let vocab = grammar_vocabulary();
    for s in Subject::ALL {
        for &a in s.actions() {
            let e = Event::new(s, a, Color::Purple, Motion::Circular).unwrap();
            for caption in std::iter::once(e.video_caption()).chain(e.paraphrases()) {
                assert!(
                    !vocab.tokenize(&caption).contains(&micap::vocab::UNK),
                    "{caption}"
                );
            }
        }
    }
}

#[test]
fn incompatible_events_are_rejected() {
    assert!(!compatible(Subject::Truck, Action::Sings));
    assert!(Event::new(Subject::Truck, Action::Sings, Color::Red, Motion::Static).is_err());
}

#[test]
fn invalid_specs_are_config_errors() {
    let bad = [
        DatasetSpec {
            count: 0,
            ..DatasetSpec::new(1, 0)
        },
        DatasetSpec {
            test_count: 3,
            ..DatasetSpec::new(2, 0)
        },
        DatasetSpec {
            height: 18,
            ..DatasetSpec::new(2, 0)
        },
        DatasetSpec {
            references: 5,
            ..DatasetSpec::new(2, 0)
        },
        DatasetSpec {
            audio_len: 10,
            ..DatasetSpec::new(2, 0)
        },
    ];
    for spec in bad {
        let err = generate_dataset(&spec).unwrap_err();
        assert_eq!(err.kind(), micap::ErrorKind::Config, "{err}");
    }
}

#[test]
fn archive_round_trip_preserves_everything() {
    let data = generate_dataset(&small(6, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_archive(&data, dir.path()).unwrap();
    assert_eq!(read_archive(dir.path()).unwrap(), data);
}

#[test]
fn static_subject_stays_put_and_moving_subject_moves() {
    let (h, w, t) = (32, 32, 4);
    let centroids = |motion| {
        let e = Event::new(Subject::Dog, Action::Barks, Color::Blue, motion).unwrap();
        let px = render_frames(&e, h, w, t, &mut sample_rng(5, 0));
        (0..t)
            .map(|f| {
                color_centroid(
                    &px[f * h * w * 3..(f + 1) * h * w * 3],
                    w,
                    Color::Blue.rgb(),
                )
                .unwrap()
            })
            .collect::<Vec<_>>()
    };
    let still = centroids(Motion::Static);
    assert!(still
        .windows(2)
        .all(|p| (p[0].0 - p[1].0).abs() < 0.5 && (p[0].1 - p[1].1).abs() < 0.5));
    let moving = centroids(Motion::Horizontal);
    assert!(moving.windows(2).all(|p| p[1].0 - p[0].0 > 1.0));
    assert!(circle_radius(h, w) > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn background_dominates_every_frame(seed in 0u64..1000) {
        let e = Event::sample(&mut sample_rng(seed, 0));
        let px = render_frames(&e, 16, 16, 2, &mut sample_rng(seed, 1));
        let near_bg = px.chunks(3).filter(|p| p.iter().all(|&c| (c as i16 - BACKGROUND as i16).abs() <= 10)).count();
        prop_assert!(near_bg * 2 > px.len() / 3);
    }
}
