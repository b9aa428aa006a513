//! Text loaders for triplet and drug-pair files.
//!
//! Fields are tab-separated; lines without a tab fall back to whitespace
//! splitting. Blank lines and lines starting with `#` are skipped.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{entity_type_of, DdiDataset, DdiPair, KnowledgeGraph, TaskMode, Triplet, Vocab};
use crate::error::{Error, Result};

fn fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_kg(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    parse_kg(&read(path)?, path)
}

/// Parses `head<TAB>relation<TAB>tail` lines; ids are assigned in order of
/// first appearance.
pub fn parse_kg(text: &str, source: &Path) -> Result<KnowledgeGraph> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let mut triplets = Vec::new();
    for (line_no, line) in content_lines(text) {
        let f = fields(line);
        if f.len() != 3 {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: line_no,
                message: format!("expected 3 fields (head, relation, tail), found {}", f.len()),
            });
        }
        let h = entities.intern(f[0])?;
        let r = relations.intern(f[1])?;
        let t = entities.intern(f[2])?;
        triplets.push(Triplet::new(h, r, t));
    }
    if triplets.is_empty() {
        return Err(Error::EmptyGraph(source.to_path_buf()));
    }
    let typed = entities.names().iter().any(|n| n.contains("::"));
    let types: Vec<String> = entities.names().iter().map(|n| entity_type_of(n).to_string()).collect();
    let g = KnowledgeGraph::new(entities, relations, triplets)?;
    if typed {
        g.with_entity_types(types)
    } else {
        Ok(g)
    }
}

pub fn load_ddi(path: impl AsRef<Path>, mode: TaskMode, entities: &mut Vocab) -> Result<DdiDataset> {
    let path = path.as_ref();
    parse_ddi(&read(path)?, path, mode, entities)
}

/// Parses `drug1<TAB>drug2<TAB>labels` lines. Drug names are resolved
/// against `entities`, appending unseen names. Labels are non-negative class
/// indices; multi-label rows separate them with commas.
pub fn parse_ddi(text: &str, source: &Path, mode: TaskMode, entities: &mut Vocab) -> Result<DdiDataset> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(source),
        line,
        message,
    };
    let mut pairs = Vec::new();
    let mut max_label = 0u32;
    for (line_no, line) in content_lines(text) {
        let f = fields(line);
        if f.len() != 3 {
            return Err(err(
                line_no,
                format!("expected 3 fields (drug1, drug2, labels), found {}", f.len()),
            ));
        }
        let label_field = f[2];
        if let Some(c) = label_field.chars().find(|c| !c.is_ascii_digit() && *c != ',') {
            let message = if c.is_ascii_punctuation() {
                format!("unknown label separator {c:?} (use ',')")
            } else {
                format!("invalid label field {label_field:?}")
            };
            return Err(err(line_no, message));
        }
        let mut labels = Vec::new();
        for tok in label_field.split(',') {
            let l: u32 = tok
                .parse()
                .map_err(|_| err(line_no, format!("invalid label {tok:?}")))?;
            labels.push(l);
        }
        if mode == TaskMode::MultiClass && labels.len() != 1 {
            return Err(err(line_no, format!("multi-class row carries {} labels", labels.len())));
        }
        labels.sort_unstable();
        labels.dedup();
        max_label = max_label.max(*labels.last().expect("nonempty"));
        let u = entities.intern(f[0])?;
        let v = entities.intern(f[1])?;
        if u == v {
            return Err(err(line_no, format!("self pair {:?}", f[0])));
        }
        pairs.push(DdiPair::new(u, v, labels));
    }
    if pairs.is_empty() {
        return Err(err(0, "no drug pairs".into()));
    }
    DdiDataset::new(pairs, mode, max_label as usize + 1)
}

/// Two-column `id<TAB>name` table.
pub fn write_id_map(vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, name) in vocab.names().iter().enumerate() {
        writeln!(out, "{i}\t{name}").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.tsv")
    }

    #[test]
    fn duplicate_triplets_collapse() {
        let g = parse_kg("a r1 b\nb r2 c\na r1 b\n", p()).unwrap();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 2);
        assert_eq!(g.num_triplets(), 2);
        assert_eq!(g.entities().names(), &["a", "b", "c"]);
    }

    #[test]
    fn tabs_and_comments() {
        let g = parse_kg("# header\nGene::1\tbinds\tCompound::x\n\n", p()).unwrap();
        assert_eq!(g.num_triplets(), 1);
        assert_eq!(g.entity_type(super::super::EntityId(0)), Some("Gene"));
    }

    #[test]
    fn empty_file_has_no_triplets() {
        let err = parse_kg("# nothing\n", p()).unwrap_err();
        assert!(err.to_string().contains("no triplets"), "{err}");
    }

    #[test]
    fn four_fields_names_line() {
        let err = parse_kg("a r b\na r b c\n", p()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn ddi_rows() {
        let mut v = Vocab::new();
        let d = parse_ddi("d1 d2 5\n", p(), TaskMode::MultiClass, &mut v).unwrap();
        assert_eq!(d.pairs[0].labels, vec![5]);
        assert_eq!(d.num_classes, 6);

        let d = parse_ddi("d1\td2\t3,7\n", p(), TaskMode::MultiLabel, &mut v).unwrap();
        assert_eq!(d.pairs[0].labels, vec![3, 7]);

        assert!(parse_ddi("d1 d2 3,7\n", p(), TaskMode::MultiClass, &mut v).is_err());
        let err = parse_ddi("d1 d2 3;7\n", p(), TaskMode::MultiLabel, &mut v).unwrap_err();
        assert!(err.to_string().contains("separator"), "{err}");
    }

    #[test]
    fn ddi_appends_unknown_drugs() {
        let mut v = Vocab::from_names(["d1", "gene"]).unwrap();
        let d = parse_ddi("d1 d9 0\n", p(), TaskMode::MultiClass, &mut v).unwrap();
        assert_eq!(d.pairs[0].u.0, 0);
        assert_eq!(d.pairs[0].v.0, 2);
        assert_eq!(v.len(), 3);
    }
}
