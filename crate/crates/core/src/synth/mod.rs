//! Procedural multi-modal dataset: rendered clips, audio captions and video
//! captions that all describe one latent event.
//!
//! Subject and color/motion are visible in the frames; the action is only
//! stated by the audio caption. Captioning the full event therefore needs
//! both modalities.

pub mod archive;
pub mod render;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use archive::{
    read_archive, write_archive, DatasetArchive, Manifest, SampleRecord, Split, ARCHIVE_VERSION,
};
pub use render::{color_centroid, render_frames};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Man,
    Woman,
    Baby,
    Dog,
    Truck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Talks,
    Sings,
    Coos,
    Barks,
    Revs,
    Plays,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Horizontal,
    Vertical,
    Circular,
    Static,
}

impl Subject {
    pub const ALL: [Subject; 5] = [
        Subject::Man,
        Subject::Woman,
        Subject::Baby,
        Subject::Dog,
        Subject::Truck,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Subject::Man => "man",
            Subject::Woman => "woman",
            Subject::Baby => "baby",
            Subject::Dog => "dog",
            Subject::Truck => "truck",
        }
    }

    /// Actions this subject may perform.
    pub fn actions(self) -> &'static [Action] {
        match self {
            Subject::Man | Subject::Woman => &[Action::Talks, Action::Sings, Action::Plays],
            Subject::Baby => &[Action::Coos, Action::Plays],
            Subject::Dog => &[Action::Barks, Action::Plays],
            Subject::Truck => &[Action::Revs],
        }
    }
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Talks,
        Action::Sings,
        Action::Coos,
        Action::Barks,
        Action::Revs,
        Action::Plays,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Action::Talks => "talks",
            Action::Sings => "sings",
            Action::Coos => "coos",
            Action::Barks => "barks",
            Action::Revs => "revs",
            Action::Plays => "plays",
        }
    }

    pub fn gerund(self) -> &'static str {
        match self {
            Action::Talks => "talking",
            Action::Sings => "singing",
            Action::Coos => "cooing",
            Action::Barks => "barking",
            Action::Revs => "revving",
            Action::Plays => "playing",
        }
    }
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 180, 60],
            Color::Blue => [40, 80, 220],
            Color::Yellow => [230, 210, 40],
            Color::Purple => [150, 60, 190],
            Color::Orange => [240, 140, 30],
        }
    }
}

impl Motion {
    pub const ALL: [Motion; 4] = [
        Motion::Horizontal,
        Motion::Vertical,
        Motion::Circular,
        Motion::Static,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            Motion::Horizontal => "while moving sideways",
            Motion::Vertical => "while moving up and down",
            Motion::Circular => "while moving in circles",
            Motion::Static => "while standing still",
        }
    }
}

pub fn compatible(subject: Subject, action: Action) -> bool {
    subject.actions().contains(&action)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub subject: Subject,
    pub action: Action,
    pub color: Color,
    pub motion: Motion,
}

impl Event {
    pub fn new(subject: Subject, action: Action, color: Color, motion: Motion) -> Result<Self> {
        if !compatible(subject, action) {
            return Err(Error::Config(format!(
                "a {} cannot {}",
                subject.word(),
                action.word()
            )));
        }
        Ok(Self {
            subject,
            action,
            color,
            motion,
        })
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let subject = *Subject::ALL.choose(rng).expect("non-empty");
        let action = *subject.actions().choose(rng).expect("non-empty");
        let color = *Color::ALL.choose(rng).expect("non-empty");
        let motion = *Motion::ALL.choose(rng).expect("non-empty");
        Self {
            subject,
            action,
            color,
            motion,
        }
    }

    /// "a {color} {subject} {action} while moving ..."
    pub fn video_caption(&self) -> String {
        format!(
            "a {} {} {} {}",
            self.color.word(),
            self.subject.word(),
            self.action.word(),
            self.motion.phrase()
        )
    }

    /// Alternative phrasings used as extra references.
    pub fn paraphrases(&self) -> Vec<String> {
        let (c, s, a, m) = (
            self.color.word(),
            self.subject.word(),
            self.action.word(),
            self.motion.phrase(),
        );
        vec![
            format!("{c} {s} {a} {m}"),
            format!("a {s} that is {c} {a} {m}"),
            format!("the {c} {s} {a} {m}"),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AudioExtra {
    None,
    Distractor(Subject, Action),
    Wind,
    Music,
}

/// "a {subject} is {action-ing}" with at most one add-on clause.
pub fn audio_caption(event: &Event, extra: AudioExtra) -> String {
    let base = format!("a {} is {}", event.subject.word(), event.action.gerund());
    match extra {
        AudioExtra::None => base,
        AudioExtra::Distractor(s, a) => format!("{base} and a {} is {}", s.word(), a.gerund()),
        AudioExtra::Wind => format!("{base} with wind in the background"),
        AudioExtra::Music => format!("{base} with music in the background"),
    }
}

fn sample_extra<R: Rng>(event: &Event, rng: &mut R) -> AudioExtra {
    match rng.gen_range(0..8) {
        0 | 1 => {
            let others: Vec<Subject> = Subject::ALL
                .iter()
                .copied()
                .filter(|&s| s != event.subject)
                .collect();
            let s = *others.choose(rng).expect("four other subjects");
            let a = *s.actions().choose(rng).expect("non-empty");
            AudioExtra::Distractor(s, a)
        }
        2 => AudioExtra::Wind,
        3 => AudioExtra::Music,
        _ => AudioExtra::None,
    }
}

/// Every caption the grammar can produce, for vocabulary construction.
pub fn grammar_corpus() -> Vec<String> {
    let mut out = Vec::new();
    for s in Subject::ALL {
        for &a in s.actions() {
            for c in Color::ALL {
                for m in Motion::ALL {
                    let e = Event {
                        subject: s,
                        action: a,
                        color: c,
                        motion: m,
                    };
                    out.push(e.video_caption());
                    out.extend(e.paraphrases());
                }
            }
            let e = Event {
                subject: s,
                action: a,
                color: Color::Red,
                motion: Motion::Static,
            };
            out.push(audio_caption(&e, AudioExtra::Wind));
            out.push(audio_caption(&e, AudioExtra::Music));
            out.push(audio_caption(&e, AudioExtra::Distractor(s, a)));
        }
    }
    out
}

/// The fixed vocabulary shared by every generated dataset.
pub fn grammar_vocabulary() -> Vocabulary {
    let corpus = grammar_corpus();
    Vocabulary::build(corpus.iter().map(String::as_str))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Total sample count; the last `test_count` are the test split.
    pub count: usize,
    pub test_count: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub audio_len: usize,
    /// References per sample: the video caption first, then paraphrases.
    pub references: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            test_count: 0,
            height: 32,
            width: 32,
            frames: 4,
            audio_len: 12,
            references: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        if self.test_count > self.count {
            return Err(Error::Config("test split larger than the dataset".into()));
        }
        if self.height < 16
            || self.width < 16
            || !self.height.is_multiple_of(4)
            || !self.width.is_multiple_of(4)
        {
            return Err(Error::Config(format!(
                "frame size {}x{} must be at least 16x16 and divisible by 4",
                self.height, self.width
            )));
        }
        if self.frames == 0 {
            return Err(Error::Config("clips need at least one frame".into()));
        }
        if self.references == 0 || self.references > 4 {
            return Err(Error::Config(
                "references per sample must be in 1..=4".into(),
            ));
        }
        if self.audio_len < 11 {
            return Err(Error::Config(format!(
                "audio length {} cannot hold the longest audio caption (11)",
                self.audio_len
            )));
        }
        Ok(())
    }
}

/// Independent generator for sample `index`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Samples events, renders frames and writes captions. Byte-identical for a
/// fixed spec.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<DatasetArchive> {
    spec.validate()?;
    let vocab = grammar_vocabulary();
    let frame_len = spec.frames * spec.height * spec.width * 3;
    let mut blobs = Vec::with_capacity(spec.count * frame_len);
    let mut samples = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = sample_rng(spec.seed, i);
        let event = Event::sample(&mut rng);
        let extra = sample_extra(&event, &mut rng);
        let frames = render_frames(&event, spec.height, spec.width, spec.frames, &mut rng);
        let video_caption = event.video_caption();
        let mut references = vec![video_caption.clone()];
        references.extend(event.paraphrases().into_iter().take(spec.references - 1));
        samples.push(SampleRecord {
            id: format!("video{i:05}"),
            frame_offset: blobs.len() as u64,
            frame_len: frame_len as u64,
            video_caption,
            audio_caption: audio_caption(&event, extra),
            references,
            split: if i >= spec.count - spec.test_count {
                Split::Test
            } else {
                Split::Train
            },
            event: Some(event),
        });
        blobs.extend_from_slice(&frames);
    }
    let manifest = Manifest {
        version: ARCHIVE_VERSION.to_string(),
        h: spec.height,
        w: spec.width,
        c: 3,
        t: spec.frames,
        s: spec.audio_len,
        seed: Some(spec.seed),
        vocab,
        samples,
    };
    DatasetArchive::new(manifest, blobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_vocabulary_is_small() {
        let v = grammar_vocabulary();
        assert!(v.len() < 60, "{} tokens", v.len());
        assert!(v.id("revving").is_some());
    }

    #[test]
    fn compatibility_table() {
        assert!(compatible(Subject::Baby, Action::Coos));
        assert!(compatible(Subject::Truck, Action::Revs));
        assert!(!compatible(Subject::Truck, Action::Coos));
        assert!(Event::new(Subject::Dog, Action::Sings, Color::Red, Motion::Static).is_err());
    }

    #[test]
    fn captions_follow_templates() {
        let e = Event::new(Subject::Woman, Action::Sings, Color::Blue, Motion::Vertical).unwrap();
        assert_eq!(
            e.video_caption(),
            "a blue woman sings while moving up and down"
        );
        assert_eq!(audio_caption(&e, AudioExtra::None), "a woman is singing");
        assert_eq!(
            audio_caption(&e, AudioExtra::Wind),
            "a woman is singing with wind in the background"
        );
    }

    #[test]
    fn longest_audio_caption_fits_default_length() {
        let v = grammar_vocabulary();
        for c in grammar_corpus() {
            if !c.contains("while") {
                assert!(v.encode_padded(&c, 12).is_ok(), "{c}");
            }
        }
    }

    #[test]
    fn invalid_dims_are_config_errors() {
        let mut spec = DatasetSpec::new(4, 0);
        spec.height = 30;
        assert!(matches!(generate_dataset(&spec), Err(Error::Config(_))));
    }
}
