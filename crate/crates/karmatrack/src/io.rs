//! Corpus, knowledge and vocabulary files.
//!
//! Tree corpora are JSONL with one comment per line:
//! `{"id": 1, "parent": null, "text": "...", "karma": 3, "ts": 1400000000}`.
//! A tree is a block of lines starting with its post; blocks are separated
//! by blank lines. A directory is read as one tree file per entry, in file
//! name order.
//!
//! Knowledge corpora are JSONL with one post per line:
//! `{"id": 1, "ts": 1400000000, "post_text": "...", "karma": 12,
//! "comments": [{"text": "...", "karma": 4}]}` (`karma` and `comments`
//! are optional).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use karmatrack_core::env::{Comment, DiscussionTree};
use karmatrack_core::knowledge::KnowledgePost;
use karmatrack_core::text::Vocabulary;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: {source}")]
    Invalid {
        path: PathBuf,
        line: usize,
        #[source]
        source: karmatrack_core::Error,
    },
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a JSONL tree file or a directory of them.
pub fn read_trees(path: &Path) -> Result<Vec<DiscussionTree>, LoadError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|source| LoadError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut trees = Vec::new();
        for f in files {
            trees.extend(parse_trees(&read(&f)?, &f)?);
        }
        return Ok(trees);
    }
    parse_trees(&read(path)?, path)
}

/// Parses tree blocks; `origin` only labels errors. Structural errors
/// point at the line of the offending comment.
pub fn parse_trees(text: &str, origin: &Path) -> Result<Vec<DiscussionTree>, LoadError> {
    let mut trees = Vec::new();
    let mut block: Vec<(Comment, usize)> = Vec::new();
    let finish = |block: &mut Vec<(Comment, usize)>, trees: &mut Vec<DiscussionTree>| {
        if block.is_empty() {
            return Ok(());
        }
        let (comments, lines): (Vec<Comment>, Vec<(i64, usize)>) =
            std::mem::take(block).into_iter().map(|(c, l)| { let id = c.id; (c, (id, l)) }).unzip();
        let tree = DiscussionTree::from_comments(comments).map_err(|source| {
            let line = match &source {
                karmatrack_core::Error::InvalidTree { id, .. } => {
                    lines.iter().find(|(i, _)| i == id).map_or(lines[0].1, |&(_, l)| l)
                }
                _ => lines[0].1,
            };
            LoadError::Invalid {
                path: origin.to_path_buf(),
                line,
                source,
            }
        })?;
        trees.push(tree);
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            finish(&mut block, &mut trees)?;
            continue;
        }
        let c: Comment = serde_json::from_str(line).map_err(|e| LoadError::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if block.is_empty() && c.parent.is_some() {
            return Err(LoadError::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                message: format!("tree block must start with its post, comment {} has a parent", c.id),
            });
        }
        block.push((c, line_no));
    }
    finish(&mut block, &mut trees)?;
    Ok(trees)
}

pub fn format_trees(trees: &[DiscussionTree]) -> String {
    let mut out = String::new();
    for (i, t) in trees.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for c in t.nodes() {
            out.push_str(&serde_json::to_string(c).expect("comments serialize"));
            out.push('\n');
        }
    }
    out
}

pub fn write_trees(path: &Path, trees: &[DiscussionTree]) -> std::io::Result<()> {
    fs::write(path, format_trees(trees))
}

pub fn read_knowledge(path: &Path) -> Result<Vec<KnowledgePost>, LoadError> {
    parse_knowledge(&read(path)?, path)
}

pub fn parse_knowledge(text: &str, origin: &Path) -> Result<Vec<KnowledgePost>, LoadError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LoadError::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_knowledge(path: &Path, posts: &[KnowledgePost]) -> std::io::Result<()> {
    let mut out = String::new();
    for p in posts {
        out.push_str(&serde_json::to_string(p).expect("posts serialize"));
        out.push('\n');
    }
    fs::write(path, out)
}

/// One token per line, in index order.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> std::io::Result<()> {
    let mut out = String::new();
    for t in vocab.tokens() {
        let _ = writeln!(out, "{t}");
    }
    fs::write(path, out)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, LoadError> {
    Ok(Vocabulary::from_tokens(read(path)?.lines().map(String::from).collect()))
}
