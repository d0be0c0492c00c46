//! DCASE-style tab-separated files.
//!
//! * strong annotations: `filename onset offset event_label`
//! * soft segment annotations: `filename onset offset event_label confidence`
//! * posteriorgrams: `frame <class 0> <class 1> ...`, one row per frame
//!
//! Every file starts with one header row. Floats are written with Rust's
//! shortest round-trip formatting, so score files reload bit-exactly.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{Event, EventList, Posteriorgram};
use crate::vocab::ClassVocabulary;

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} '{field}' is not a number"),
    })
}

fn group(lists: &mut Vec<EventList>, clip_id: &str, event: Event) {
    match lists.iter_mut().rev().find(|l| l.clip_id == clip_id) {
        Some(list) => list.events.push(event),
        None => lists.push(EventList {
            clip_id: clip_id.to_string(),
            events: vec![event],
        }),
    }
}

fn parse_rows(text: &str, vocab: &ClassVocabulary, arity: usize) -> Result<Vec<(String, Event)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != arity {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "expected {arity} tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        let onset = parse_f64(fields[1], lineno, "onset")?;
        let offset = parse_f64(fields[2], lineno, "offset")?;
        if !(onset < offset) || onset < 0.0 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("onset {onset} is not before offset {offset}"),
            });
        }
        let label = fields[3].trim();
        let class = vocab
            .index_of(label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))?;
        let confidence = if arity == 5 {
            let c = parse_f64(fields[4], lineno, "confidence")?;
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("confidence {c} outside [0, 1]"),
                });
            }
            c
        } else {
            1.0
        };
        rows.push((
            fields[0].to_string(),
            Event {
                onset,
                offset,
                class,
                confidence,
            },
        ));
    }
    Ok(rows)
}

/// Parses a strong annotation file, grouping events by filename in order of
/// first appearance.
pub fn parse_events_tsv(text: &str, vocab: &ClassVocabulary) -> Result<Vec<EventList>> {
    let mut lists = Vec::new();
    for (clip, event) in parse_rows(text, vocab, 4)? {
        group(&mut lists, &clip, event);
    }
    Ok(lists)
}

pub fn format_events_tsv(lists: &[EventList], vocab: &ClassVocabulary) -> String {
    let mut out = String::from("filename\tonset\toffset\tevent_label\n");
    for list in lists {
        for e in &list.events {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                list.clip_id,
                e.onset,
                e.offset,
                vocab.name(e.class)
            ));
        }
    }
    out
}

/// One row of a soft segment annotation file.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSegment {
    pub clip_id: String,
    pub onset: f64,
    pub offset: f64,
    pub class: usize,
    pub confidence: f64,
}

pub fn parse_soft_tsv(text: &str, vocab: &ClassVocabulary) -> Result<Vec<SoftSegment>> {
    Ok(parse_rows(text, vocab, 5)?
        .into_iter()
        .map(|(clip_id, e)| SoftSegment {
            clip_id,
            onset: e.onset,
            offset: e.offset,
            class: e.class,
            confidence: e.confidence,
        })
        .collect())
}

pub fn format_soft_tsv(rows: &[SoftSegment], vocab: &ClassVocabulary) -> String {
    let mut out = String::from("filename\tonset\toffset\tevent_label\tconfidence\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.clip_id,
            r.onset,
            r.offset,
            vocab.name(r.class),
            r.confidence
        ));
    }
    out
}

pub fn write_posteriorgram_tsv(post: &Posteriorgram, vocab: &ClassVocabulary) -> Result<String> {
    if post.n_classes() != vocab.len() {
        return Err(Error::Shape(format!(
            "posteriorgram has {} classes, vocabulary {}",
            post.n_classes(),
            vocab.len()
        )));
    }
    let mut out = String::from("frame");
    for name in vocab.names() {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..post.n_frames() {
        out.push_str(&t.to_string());
        for c in 0..post.n_classes() {
            out.push('\t');
            out.push_str(&post.scores[[c, t]].to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_posteriorgram_tsv(
    text: &str,
    clip_id: &str,
    frame_hop: f64,
    vocab: &ClassVocabulary,
) -> Result<Posteriorgram> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let names: Vec<&str> = header.split('\t').skip(1).collect();
    if names.len() != vocab.len() || names.iter().zip(vocab.names()).any(|(a, b)| *a != b) {
        return Err(Error::Parse {
            line: 1,
            msg: "header does not match the class vocabulary".into(),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != names.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: "wrong number of columns".into(),
            });
        }
        let frame: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: "frame index is not an integer".into(),
        })?;
        if frame != rows.len() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected frame {}, found {frame}", rows.len()),
            });
        }
        rows.push(
            fields[1..]
                .iter()
                .map(|f| parse_f64(f, lineno, "score"))
                .collect::<Result<_>>()?,
        );
    }
    let n_frames = rows.len();
    let scores = Array2::from_shape_fn((vocab.len(), n_frames), |(c, t)| rows[t][c]);
    Posteriorgram::new(clip_id, scores, frame_hop)
}

fn score_file_name(clip_id: &str) -> String {
    let safe: String = clip_id
        .chars()
        .map(|c| if c == '/' || c == '\\' { '_' } else { c })
        .collect();
    format!("{safe}.tsv")
}

/// Writes one posteriorgram TSV per clip plus `index.tsv`
/// (`clip_id file frame_hop`).
pub fn write_score_dir(dir: &Path, posts: &[Posteriorgram], vocab: &ClassVocabulary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("clip_id\tfile\tframe_hop\n");
    for post in posts {
        let file = score_file_name(&post.clip_id);
        let path = dir.join(&file);
        fs::write(&path, write_posteriorgram_tsv(post, vocab)?).map_err(|e| Error::io(&path, e))?;
        index.push_str(&format!("{}\t{}\t{}\n", post.clip_id, file, post.frame_hop));
    }
    let path = dir.join("index.tsv");
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

pub fn read_score_dir(dir: &Path, vocab: &ClassVocabulary) -> Result<Vec<Posteriorgram>> {
    let path = dir.join("index.tsv");
    let index = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut posts = Vec::new();
    for (i, line) in index.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: "index rows need clip_id, file, frame_hop".into(),
            });
        }
        let hop = parse_f64(fields[2], i + 1, "frame_hop")?;
        let file = dir.join(fields[1]);
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        posts.push(read_posteriorgram_tsv(&text, fields[0], hop, vocab)?);
    }
    Ok(posts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> ClassVocabulary {
        ClassVocabulary::dcase2024()
    }

    #[test]
    fn single_row() {
        let text = "filename\tonset\toffset\tevent_label\na.wav\t1.0\t2.5\tSpeech\n";
        let lists = parse_events_tsv(text, &vocab()).unwrap();
        assert_eq!(lists.len(), 1);
        assert_eq!(lists[0].clip_id, "a.wav");
        let e = lists[0].events[0];
        assert_eq!((e.onset, e.offset), (1.0, 2.5));
        assert_eq!(vocab().name(e.class), "Speech");
    }

    #[test]
    fn header_only_is_empty() {
        let text = "filename\tonset\toffset\tevent_label\n";
        assert!(parse_events_tsv(text, &vocab()).unwrap().is_empty());
    }

    #[test]
    fn inverted_interval_names_line() {
        let text = "filename\tonset\toffset\tevent_label\na.wav\t1\t2\tDog\nb.wav\t3.0\t2.0\tDog\n";
        match parse_events_tsv(text, &vocab()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arity_and_numbers_checked() {
        let v = vocab();
        let bad_arity = "h\na.wav\t1.0\tSpeech\n";
        assert!(matches!(
            parse_events_tsv(bad_arity, &v),
            Err(Error::Parse { line: 2, .. })
        ));
        let bad_num = "h\na.wav\tone\t2.0\tSpeech\n";
        assert!(matches!(
            parse_events_tsv(bad_num, &v),
            Err(Error::Parse { line: 2, .. })
        ));
        let unknown = "h\na.wav\t1\t2\tTrombone\n";
        match parse_events_tsv(unknown, &v) {
            Err(Error::UnknownClass(c)) => assert_eq!(c, "Trombone"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn groups_by_filename() {
        let text = "h\na.wav\t0\t1\tDog\nb.wav\t0\t1\tCat\na.wav\t2\t3\tCat\n";
        let lists = parse_events_tsv(text, &vocab()).unwrap();
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].events.len(), 2);
    }

    #[test]
    fn soft_rows_carry_confidence() {
        let text = "h\nm.wav\t0\t1\tcar\t0.25\n";
        let rows = parse_soft_tsv(text, &vocab()).unwrap();
        assert_eq!(rows[0].confidence, 0.25);
        assert_eq!(
            parse_soft_tsv(&format_soft_tsv(&rows, &vocab()), &vocab()).unwrap(),
            rows
        );
    }

    #[test]
    fn score_dir_round_trip() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let scores = Array2::from_shape_fn((v.len(), 7), |(c, t)| {
            ((c * 7 + t) as f64 / 1000.0).sin().abs()
        });
        let post = Posteriorgram::new("clip/x.wav", scores, 0.2).unwrap();
        write_score_dir(dir.path(), std::slice::from_ref(&post), &v).unwrap();
        let back = read_score_dir(dir.path(), &v).unwrap();
        assert_eq!(back, vec![post]);
    }

    proptest! {
        #[test]
        fn events_round_trip(
            rows in proptest::collection::vec((0usize..3, 0.0f64..9.0, 0.001f64..1.0, 0usize..22), 0..12)
        ) {
            let v = vocab();
            let mut lists: Vec<EventList> = Vec::new();
            for (clip, onset, dur, class) in rows {
                group(&mut lists, &format!("c{clip}.wav"), Event::new(onset, onset + dur, class));
            }
            let text = format_events_tsv(&lists, &v);
            let back = parse_events_tsv(&text, &v).unwrap();
            let flat = |ls: &[EventList]| -> Vec<(String, Event)> {
                ls.iter().flat_map(|l| l.events.iter().map(move |e| (l.clip_id.clone(), *e))).collect()
            };
            let mut a = flat(&lists);
            let mut b = flat(&back);
            a.sort_by(|x, y| x.0.cmp(&y.0));
            b.sort_by(|x, y| x.0.cmp(&y.0));
            prop_assert_eq!(a, b);
        }
    }
}
