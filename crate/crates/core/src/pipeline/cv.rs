//! Leave-one-session-out folds. Session 1 is the search session and stays
//! in every training set; each other session is held out once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEARCH_SESSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test: u32,
    pub train: Vec<u32>,
}

/// Folds for the given session ids, ordered by test session.
pub fn folds(sessions: &[u32]) -> Result<Vec<Fold>> {
    let mut s = sessions.to_vec();
    s.sort_unstable();
    s.dedup();
    if !s.contains(&SEARCH_SESSION) {
        return Err(Error::Dataset(format!("session {SEARCH_SESSION} missing")));
    }
    if s.len() < 2 {
        return Err(Error::Dataset("cross-validation needs at least two sessions".into()));
    }
    Ok(s.iter()
        .filter(|&&t| t != SEARCH_SESSION)
        .map(|&test| Fold {
            test,
            train: s.iter().copied().filter(|&x| x != test).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_sessions_four_folds() {
        let f = folds(&[3, 1, 2, 5, 4]).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f.iter().map(|f| f.test).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        for fold in &f {
            assert!(fold.train.contains(&SEARCH_SESSION));
            assert!(!fold.train.contains(&fold.test));
            assert_eq!(fold.train.len(), 4);
        }
    }

    #[test]
    fn two_sessions_one_fold() {
        assert_eq!(folds(&[1, 2]).unwrap(), vec![Fold { test: 2, train: vec![1] }]);
    }

    #[test]
    fn errors() {
        assert!(matches!(folds(&[2, 3]), Err(Error::Dataset(m)) if m.contains("missing")));
        assert!(folds(&[1]).is_err());
        assert!(folds(&[]).is_err());
    }
}
