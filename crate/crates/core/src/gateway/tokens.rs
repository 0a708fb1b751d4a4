//! Token estimation and progressive context compression.
//!
//! The estimate is `ceil(chars / 4)` over Unicode scalar values. It is an
//! approximation of subword tokenizers, not a reimplementation of one.

use crate::error::{Error, Result};

/// Halvings attempted before falling back to exact truncation.
const MAX_HALVINGS: u32 = 16;

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Result of [`compress_context`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Compressed {
    /// `core` followed by the kept prefix of `aux`.
    pub text: String,
    /// The kept prefix of `aux`.
    pub aux_kept: String,
    pub halvings: u32,
    /// Exact truncation was needed after halving.
    pub truncated: bool,
}

impl Compressed {
    pub fn was_compressed(&self) -> bool {
        self.halvings > 0 || self.truncated
    }
}

/// Fits `core + aux` into `budget` tokens.
///
/// `core` is never touched. `aux` is halved (prefix kept) until the total
/// fits; if halving alone does not converge it is cut to the exact number of
/// characters left. Inputs that already fit come back unchanged.
pub fn compress_context(core: &str, aux: &str, budget: usize) -> Result<Compressed> {
    let core_tokens = estimate_tokens(core);
    if core_tokens > budget {
        return Err(Error::Budget {
            needed: core_tokens,
            budget,
        });
    }
    let fits = |aux_part: &str| estimate_tokens(&format!("{core}{aux_part}")) <= budget;
    if fits(aux) {
        return Ok(Compressed {
            text: format!("{core}{aux}"),
            aux_kept: aux.to_string(),
            halvings: 0,
            truncated: false,
        });
    }

    let chars: Vec<char> = aux.chars().collect();
    let mut keep = chars.len();
    let mut halvings = 0;
    while keep > 0 && halvings < MAX_HALVINGS {
        keep /= 2;
        halvings += 1;
        let candidate: String = chars[..keep].iter().collect();
        if fits(&candidate) {
            return Ok(Compressed {
                text: format!("{core}{candidate}"),
                aux_kept: candidate,
                halvings,
                truncated: false,
            });
        }
    }

    // core fits on its own, so there is always a non-negative char allowance
    let allowance = (budget * 4).saturating_sub(core.chars().count());
    keep = keep.min(allowance);
    let kept: String = chars[..keep].iter().collect();
    Ok(Compressed {
        text: format!("{core}{kept}"),
        aux_kept: kept,
        halvings,
        truncated: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_is_zero() {
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn golden_fixture() {
        // 45 scalar values -> ceil(45 / 4) = 12
        let fixture = "Graph expansion keeps twenty papers per seed.";
        assert_eq!(fixture.chars().count(), 45);
        assert_eq!(estimate_tokens(fixture), 12);
        // multi-byte characters count once each
        assert_eq!(estimate_tokens("ééé"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn fitting_input_is_identity() {
        let c = compress_context("core ", "aux", 100).unwrap();
        assert_eq!(c.text, "core aux");
        assert!(!c.was_compressed());
    }

    #[test]
    fn aux_twice_remaining_is_halved_once() {
        // core = 100 tokens, budget 200 => 100 tokens left; aux = 200 tokens
        let core = "c".repeat(400);
        let aux = "a".repeat(800);
        let c = compress_context(&core, &aux, 200).unwrap();
        assert_eq!(c.halvings, 1);
        assert!(!c.truncated);
        assert_eq!(c.aux_kept.len(), 400);
        assert!(estimate_tokens(&c.text) <= 200);
        assert!(c.text.starts_with(&core));
    }

    #[test]
    fn core_over_budget_is_rejected() {
        let core = "c".repeat(41);
        assert!(matches!(
            compress_context(&core, "", 10),
            Err(Error::Budget { needed: 11, budget: 10 })
        ));
    }

    proptest! {
        #[test]
        fn within_budget_core_preserved_idempotent(
            core in "[a-z ]{0,80}",
            aux in "[a-zé ]{0,400}",
            extra in 0usize..60,
        ) {
            let budget = estimate_tokens(&core) + extra;
            let c = compress_context(&core, &aux, budget).unwrap();
            prop_assert!(estimate_tokens(&c.text) <= budget);
            prop_assert!(c.text.starts_with(&core));
            prop_assert!(aux.starts_with(&c.aux_kept));
            let again = compress_context(&core, &c.aux_kept, budget).unwrap();
            prop_assert_eq!(&again.text, &c.text);
            prop_assert!(!again.was_compressed());
        }

        #[test]
        fn estimate_monotone_under_doubling(t in ".{0,200}") {
            prop_assert!(estimate_tokens(&t.repeat(2)) >= estimate_tokens(&t));
        }
    }
}
