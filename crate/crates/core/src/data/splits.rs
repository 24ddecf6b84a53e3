use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// One subject-disjoint train/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolSplit {
    /// 1-based.
    pub replicate: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// `replicates` independent random partitions with `n_train` training
/// subjects each. Subject lists inside a split are sorted.
pub fn make_splits(subjects: &[String], n_train: usize, replicates: usize, seed: u64) -> Result<Vec<ProtocolSplit>> {
    let unique: BTreeSet<&String> = subjects.iter().collect();
    if unique.len() != subjects.len() {
        return Err(Error::Data("duplicate subject ids".into()));
    }
    if n_train == 0 || n_train >= subjects.len() {
        return Err(Error::Data(format!(
            "cannot take {n_train} training subjects from {} and leave a test set",
            subjects.len()
        )));
    }
    let mut base: Vec<String> = unique.into_iter().cloned().collect();
    base.sort();
    (1..=replicates)
        .map(|r| {
            let mut ids = base.clone();
            ids.shuffle(&mut rng_for(seed, &format!("splits.{r}")));
            let mut train = ids[..n_train].to_vec();
            let mut test = ids[n_train..].to_vec();
            train.sort();
            test.sort();
            Ok(ProtocolSplit { replicate: r, seed, train, test })
        })
        .collect()
}

fn write_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect())
}

/// Writes `split{r}_train.txt` and `split{r}_test.txt`, one subject id per line.
pub fn write_split(dir: &Path, split: &ProtocolSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_list(&dir.join(format!("split{}_train.txt", split.replicate)), &split.train)?;
    write_list(&dir.join(format!("split{}_test.txt", split.replicate)), &split.test)
}

pub fn read_split(dir: &Path, replicate: usize, seed: u64) -> Result<ProtocolSplit> {
    let train = read_list(&dir.join(format!("split{replicate}_train.txt")))?;
    let test = read_list(&dir.join(format!("split{replicate}_test.txt")))?;
    if let Some(s) = train.iter().find(|s| test.contains(s)) {
        return Err(Error::Data(format!("split {replicate}: subject {s} is in both train and test")));
    }
    Ok(ProtocolSplit { replicate, seed, train, test })
}
