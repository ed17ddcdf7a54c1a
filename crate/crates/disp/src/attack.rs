//! Generation of the five adversarial attack types — character-level
//! insertion/deletion/swap and word-level random/embed substitution — plus
//! document-level perturbation and the oracle protocol that searches
//! candidate perturbations for one that flips a classifier.
//!
//! Character edits stay interior (deletion and swap never touch the first
//! or last character) so the perturbed token keeps its word shape. All
//! sampling is driven by seeds derived from (config seed, doc id, candidate
//! index), making the full attack map deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use crate::text::AttackKind;

use crate::knn::brute_force_knn;
use crate::seeding;
use crate::text::{Document, EmbeddingCorpus, PerturbationRecord, Token};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("token {token:?} too short for {kind} (needs length >= {min})")]
    TokenTooShort {
        token: String,
        kind: AttackKind,
        min: usize,
    },
    #[error("token {0:?} has no adjacent interior pair of distinct characters")]
    NoDistinctPair(String),
    #[error("replacement vocabulary has no candidate other than the input")]
    EmptyVocabulary,
    #[error("token {0:?} is not in the embedding corpus")]
    TokenNotInCorpus(String),
    #[error("document {doc_id:?} has {available} attackable tokens, {needed} required")]
    NotEnoughAttackableTokens {
        doc_id: String,
        needed: usize,
        available: usize,
    },
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub num_attacks: usize,
    pub rng_seed: u64,
    /// Candidate pool size for embed attacks.
    pub embed_top_k: usize,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, num_attacks: usize, rng_seed: u64) -> Self {
        AttackConfig {
            kind,
            num_attacks,
            rng_seed,
            embed_top_k: 10,
        }
    }
}

// -- character-level primitives ---------------------------------------------

/// Insert `ch` before position `pos` (char index).
pub fn insert_char_at(token: &Token, pos: usize, ch: char) -> Token {
    let mut chars: Vec<char> = token.as_str().chars().collect();
    chars.insert(pos, ch);
    Token::new(chars.into_iter().collect::<String>()).expect("insertion keeps token valid")
}

/// Remove the character at `pos` (char index).
pub fn delete_char_at(token: &Token, pos: usize) -> Token {
    let mut chars: Vec<char> = token.as_str().chars().collect();
    chars.remove(pos);
    Token::new(chars.into_iter().collect::<String>()).expect("interior deletion keeps token valid")
}

/// Exchange the characters at `pos` and `pos + 1`.
pub fn swap_adjacent_at(token: &Token, pos: usize) -> Token {
    let mut chars: Vec<char> = token.as_str().chars().collect();
    chars.swap(pos, pos + 1);
    Token::new(chars.into_iter().collect::<String>()).expect("swap keeps token valid")
}

// -- the five attacks --------------------------------------------------------

/// Inject one lowercase letter. For tokens of length >= 2 the insertion
/// point is interior (1..=len-1); a single-character token grows at the end.
pub fn attack_insertion(token: &Token, rng: &mut ChaCha8Rng) -> Token {
    let len = token.char_len();
    let pos = if len >= 2 {
        rng.random_range(1..len)
    } else {
        1
    };
    let ch = (b'a' + rng.random_range(0..26u8)) as char;
    insert_char_at(token, pos, ch)
}

/// Remove one interior character; the first and last characters survive.
pub fn attack_deletion(token: &Token, rng: &mut ChaCha8Rng) -> Result<Token, AttackError> {
    let len = token.char_len();
    if len < 3 {
        return Err(AttackError::TokenTooShort {
            token: token.as_str().to_owned(),
            kind: AttackKind::Deletion,
            min: 3,
        });
    }
    let pos = rng.random_range(1..len - 1);
    Ok(delete_char_at(token, pos))
}

/// Positions eligible for an interior swap: adjacent distinct characters,
/// neither of them first or last.
fn swap_positions(token: &Token) -> Vec<usize> {
    let chars: Vec<char> = token.as_str().chars().collect();
    if chars.len() < 4 {
        return Vec::new();
    }
    (1..=chars.len() - 3)
        .filter(|&p| chars[p] != chars[p + 1])
        .collect()
}

/// Flip one adjacent interior pair of distinct characters.
pub fn attack_swap(token: &Token, rng: &mut ChaCha8Rng) -> Result<Token, AttackError> {
    if token.char_len() < 4 {
        return Err(AttackError::TokenTooShort {
            token: token.as_str().to_owned(),
            kind: AttackKind::Swap,
            min: 4,
        });
    }
    let positions = swap_positions(token);
    if positions.is_empty() {
        return Err(AttackError::NoDistinctPair(token.as_str().to_owned()));
    }
    let pos = positions[rng.random_range(0..positions.len())];
    Ok(swap_adjacent_at(token, pos))
}

/// Replace with a uniformly sampled corpus token different from the input.
pub fn attack_random(
    token: &Token,
    corpus: &EmbeddingCorpus,
    rng: &mut ChaCha8Rng,
) -> Result<Token, AttackError> {
    let n = corpus.n();
    let input_row = corpus.lookup(token.as_str());
    let candidates = n - usize::from(input_row.is_some());
    if candidates == 0 {
        return Err(AttackError::EmptyVocabulary);
    }
    let mut pick = rng.random_range(0..candidates);
    if let Some(row) = input_row {
        if pick >= row {
            pick += 1;
        }
    }
    Ok(corpus.token(pick).clone())
}

/// Replace with a uniform sample from the `top_k` exact nearest neighbors of
/// the token's own embedding (the token itself excluded).
pub fn attack_embed(
    token: &Token,
    corpus: &EmbeddingCorpus,
    rng: &mut ChaCha8Rng,
    top_k: usize,
) -> Result<Token, AttackError> {
    let row = corpus
        .lookup(token.as_str())
        .ok_or_else(|| AttackError::TokenNotInCorpus(token.as_str().to_owned()))?;
    if corpus.n() < 2 {
        return Err(AttackError::EmptyVocabulary);
    }
    let result = brute_force_knn(corpus, corpus.vector(row), top_k + 1)
        .expect("non-empty corpus admits exact search");
    let neighbors: Vec<u32> = result
        .ids()
        .into_iter()
        .filter(|&id| id as usize != row)
        .take(top_k)
        .collect();
    let pick = neighbors[rng.random_range(0..neighbors.len())];
    Ok(corpus.token(pick as usize).clone())
}

// -- document-level perturbation ----------------------------------------------

/// Whether a token can host an attack of the given kind: alphabetic surface,
/// the kind's length floor, a distinct interior pair for swaps, and corpus
/// membership for embed substitutions.
pub fn is_attackable(token: &Token, kind: AttackKind, corpus: &EmbeddingCorpus) -> bool {
    if !token.is_alphabetic() {
        return false;
    }
    match kind {
        AttackKind::Insertion => token.char_len() >= 1,
        AttackKind::Deletion => token.char_len() >= 3,
        AttackKind::Swap => !swap_positions(token).is_empty(),
        AttackKind::Random => true,
        AttackKind::Embed => corpus.contains(token),
    }
}

fn apply_attack(
    token: &Token,
    kind: AttackKind,
    corpus: &EmbeddingCorpus,
    top_k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Token, AttackError> {
    match kind {
        AttackKind::Insertion => Ok(attack_insertion(token, rng)),
        AttackKind::Deletion => attack_deletion(token, rng),
        AttackKind::Swap => attack_swap(token, rng),
        AttackKind::Random => attack_random(token, corpus, rng),
        AttackKind::Embed => attack_embed(token, corpus, rng, top_k),
    }
}

fn doc_rng(cfg_seed: u64, doc_id: &str) -> ChaCha8Rng {
    seeding::rng(seeding::derive(
        cfg_seed,
        seeding::stable_hash(doc_id.as_bytes()),
    ))
}

/// Perturb `num_attacks` distinct attackable positions, uniformly sampled
/// without replacement. Unattacked positions stay byte-identical and the
/// token count is preserved. Deterministic in (seed, doc id).
pub fn perturb_document(
    doc: &Document,
    cfg: &AttackConfig,
    corpus: &EmbeddingCorpus,
) -> Result<(Document, Vec<PerturbationRecord>), AttackError> {
    let mut rng = doc_rng(cfg.rng_seed, &doc.id);
    perturb_document_with_rng(doc, cfg, corpus, &mut rng)
}

fn perturb_document_with_rng(
    doc: &Document,
    cfg: &AttackConfig,
    corpus: &EmbeddingCorpus,
    rng: &mut ChaCha8Rng,
) -> Result<(Document, Vec<PerturbationRecord>), AttackError> {
    if cfg.num_attacks == 0 {
        return Ok((doc.clone(), Vec::new()));
    }
    let mut attackable: Vec<usize> = (0..doc.len())
        .filter(|&i| is_attackable(&doc.tokens[i], cfg.kind, corpus))
        .collect();
    if attackable.len() < cfg.num_attacks {
        return Err(AttackError::NotEnoughAttackableTokens {
            doc_id: doc.id.clone(),
            needed: cfg.num_attacks,
            available: attackable.len(),
        });
    }
    // partial Fisher-Yates: first num_attacks entries are the chosen set
    for i in 0..cfg.num_attacks {
        let j = i + rng.random_range(0..attackable.len() - i);
        attackable.swap(i, j);
    }
    let mut positions: Vec<usize> = attackable[..cfg.num_attacks].to_vec();
    positions.sort_unstable();

    let mut perturbed = doc.clone();
    let mut records = Vec::with_capacity(positions.len());
    for &pos in &positions {
        let original = doc.tokens[pos].clone();
        let replacement = apply_attack(&original, cfg.kind, corpus, cfg.embed_top_k, rng)?;
        perturbed.tokens[pos] = replacement.clone();
        records.push(PerturbationRecord {
            doc_id: doc.id.clone(),
            position: pos,
            kind: cfg.kind,
            original,
            replacement,
        });
    }
    Ok((perturbed, records))
}

// -- oracle attacks ------------------------------------------------------------

/// Anything that predicts a label with a confidence for a document. The
/// downstream classifier implements this; tests use closures.
pub trait DocumentClassifier {
    fn predict_document(&self, doc: &Document) -> (usize, f64);
}

impl<F: Fn(&Document) -> (usize, f64)> DocumentClassifier for F {
    fn predict_document(&self, doc: &Document) -> (usize, f64) {
        self(doc)
    }
}

#[derive(Debug, Clone)]
pub struct OracleCandidate {
    pub document: Document,
    pub records: Vec<PerturbationRecord>,
    pub predicted: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub base_prediction: usize,
    pub candidates: Vec<OracleCandidate>,
    pub chosen: usize,
    /// True when the chosen candidate flips the model's prediction.
    pub flipped: bool,
}

impl OracleOutcome {
    pub fn chosen_candidate(&self) -> &OracleCandidate {
        &self.candidates[self.chosen]
    }
}

/// Generate `num_candidates` perturbed variants and pick the first one that
/// flips the model's clean prediction; if none flips, pick the variant with
/// the lowest confidence in that prediction (ties resolve to the lowest
/// candidate index). Candidate i draws its randomness from (seed, doc, i).
pub fn oracle_attack_detailed(
    doc: &Document,
    model: &dyn DocumentClassifier,
    cfg: &AttackConfig,
    corpus: &EmbeddingCorpus,
    num_candidates: usize,
) -> Result<OracleOutcome, AttackError> {
    let (base_prediction, _) = model.predict_document(doc);
    let mut candidates = Vec::with_capacity(num_candidates);
    for c in 0..num_candidates {
        let candidate_cfg = AttackConfig {
            rng_seed: seeding::derive(cfg.rng_seed, c as u64),
            ..cfg.clone()
        };
        let mut rng = doc_rng(candidate_cfg.rng_seed, &doc.id);
        let (document, records) = perturb_document_with_rng(doc, &candidate_cfg, corpus, &mut rng)?;
        let (predicted, confidence) = model.predict_document(&document);
        candidates.push(OracleCandidate {
            document,
            records,
            predicted,
            confidence,
        });
    }
    let flip = candidates.iter().position(|c| c.predicted != base_prediction);
    let chosen = flip.unwrap_or_else(|| {
        let mut best = 0usize;
        for (i, c) in candidates.iter().enumerate().skip(1) {
            if c.confidence < candidates[best].confidence {
                best = i;
            }
        }
        best
    });
    Ok(OracleOutcome {
        base_prediction,
        candidates,
        chosen,
        flipped: flip.is_some(),
    })
}

/// [`oracle_attack_detailed`] returning only the chosen adversarial variant.
pub fn oracle_attack(
    doc: &Document,
    model: &dyn DocumentClassifier,
    cfg: &AttackConfig,
    corpus: &EmbeddingCorpus,
    num_candidates: usize,
) -> Result<(Document, Vec<PerturbationRecord>), AttackError> {
    let outcome = oracle_attack_detailed(doc, model, cfg, corpus, num_candidates)?;
    let chosen = outcome.candidates.into_iter().nth(outcome.chosen).expect("chosen in range");
    Ok((chosen.document, chosen.records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_embedding_corpus;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    fn small_corpus() -> EmbeddingCorpus {
        parse_embedding_corpus(concat!(
            "6 2\n",
            "best 1 0\n",
            "way 1.1 0\n",
            "good 1.3 0.1\n",
            "bad -1 0\n",
            "worse -1.2 0\n",
            "aggrandize 5 5\n",
        ))
        .unwrap()
    }

    #[test]
    fn insertion_grows_by_one_and_reaches_interior_variants() {
        let mut rng = seeding::rng(1);
        let mut saw_beast = false;
        for _ in 0..500 {
            let out = attack_insertion(&tok("best"), &mut rng);
            assert_eq!(out.char_len(), 5);
            assert_ne!(out, tok("best"));
            assert!(out.as_str().starts_with('b'));
            assert!(out.as_str().ends_with('t'));
            if out.as_str() == "beast" {
                saw_beast = true;
            }
        }
        assert!(saw_beast, "interior 'a' insertion is reachable");
    }

    #[test]
    fn insertion_on_single_char_token_appends() {
        let mut rng = seeding::rng(2);
        let out = attack_insertion(&tok("a"), &mut rng);
        assert_eq!(out.char_len(), 2);
        assert!(out.as_str().starts_with('a'));
    }

    #[test]
    fn deletion_examples() {
        let mut rng = seeding::rng(3);
        let mut saw_bet = false;
        for _ in 0..100 {
            let out = attack_deletion(&tok("best"), &mut rng).unwrap();
            assert_eq!(out.char_len(), 3);
            assert!(out.as_str().starts_with('b') && out.as_str().ends_with('t'));
            if out.as_str() == "bet" {
                saw_bet = true;
            }
        }
        assert!(saw_bet);
        assert!(matches!(
            attack_deletion(&tok("ab"), &mut rng),
            Err(AttackError::TokenTooShort { min: 3, .. })
        ));
        // single interior position: forced outcome
        assert_eq!(attack_deletion(&tok("abc"), &mut rng).unwrap(), tok("ac"));
    }

    #[test]
    fn swap_flips_one_interior_pair() {
        let mut rng = seeding::rng(4);
        // "best" has exactly one eligible interior pair (e,s)
        let out = attack_swap(&tok("best"), &mut rng).unwrap();
        assert_eq!(out, tok("bset"));
        assert!(matches!(
            attack_swap(&tok("abc"), &mut rng),
            Err(AttackError::TokenTooShort { min: 4, .. })
        ));
        assert!(matches!(
            attack_swap(&tok("aaaa"), &mut rng),
            Err(AttackError::NoDistinctPair(_))
        ));
    }

    #[test]
    fn swap_twice_at_same_position_is_identity() {
        let t = tok("universe");
        for p in 1..=t.char_len() - 3 {
            assert_eq!(swap_adjacent_at(&swap_adjacent_at(&t, p), p), t);
        }
    }

    #[test]
    fn insertion_then_deletion_restores_original() {
        let t = tok("moviemaking");
        for pos in 1..t.char_len() {
            let grown = insert_char_at(&t, pos, 'q');
            assert_eq!(delete_char_at(&grown, pos), t);
        }
    }

    #[test]
    fn random_attack_never_returns_input() {
        let corpus = small_corpus();
        let mut rng = seeding::rng(5);
        for _ in 0..300 {
            let out = attack_random(&tok("best"), &corpus, &mut rng).unwrap();
            assert_ne!(out, tok("best"));
            assert!(corpus.contains(&out));
        }
        // two-token corpus forces the other token
        let two = parse_embedding_corpus("2 1\nx 0\ny 1").unwrap();
        assert_eq!(attack_random(&tok("x"), &two, &mut rng).unwrap(), tok("y"));
        let one = parse_embedding_corpus("1 1\nx 0").unwrap();
        assert!(matches!(
            attack_random(&tok("x"), &one, &mut rng),
            Err(AttackError::EmptyVocabulary)
        ));
    }

    #[test]
    fn embed_attack_samples_within_exact_top_k() {
        let corpus = small_corpus();
        let mut rng = seeding::rng(6);
        let exact = brute_force_knn(&corpus, corpus.vector(0), corpus.n()).unwrap();
        let top3: Vec<&str> = exact
            .ids()
            .iter()
            .filter(|&&id| id != 0)
            .take(3)
            .map(|&id| corpus.token(id as usize).as_str())
            .collect();
        for _ in 0..200 {
            let out = attack_embed(&tok("best"), &corpus, &mut rng, 3).unwrap();
            assert!(top3.contains(&out.as_str()), "{out} outside exact top-3");
        }
        assert!(matches!(
            attack_embed(&tok("zzz"), &corpus, &mut rng, 3),
            Err(AttackError::TokenNotInCorpus(_))
        ));
        // top_k larger than corpus clips to n-1 candidates
        let three = parse_embedding_corpus("3 1\nx 0\ny 1\nz 2").unwrap();
        for _ in 0..50 {
            let out = attack_embed(&tok("x"), &three, &mut rng, 10).unwrap();
            assert_ne!(out.as_str(), "x");
        }
    }

    fn sample_doc() -> Document {
        Document::new(
            "doc-1",
            1,
            vec![
                tok("old-form"),
                tok("moviemaking"),
                tok("at"),
                tok("its"),
                tok("best"),
                tok("."),
            ],
        )
    }

    #[test]
    fn perturb_document_zero_attacks_is_identity() {
        let corpus = small_corpus();
        let doc = sample_doc();
        let cfg = AttackConfig::new(AttackKind::Insertion, 0, 9);
        let (out, records) = perturb_document(&doc, &cfg, &corpus).unwrap();
        assert_eq!(out, doc);
        assert!(records.is_empty());
    }

    #[test]
    fn perturb_document_hits_exactly_n_distinct_positions() {
        let corpus = small_corpus();
        let doc = sample_doc();
        let cfg = AttackConfig::new(AttackKind::Insertion, 2, 9);
        let (out, records) = perturb_document(&doc, &cfg, &corpus).unwrap();
        assert_eq!(out.len(), doc.len());
        assert_eq!(records.len(), 2);
        assert_ne!(records[0].position, records[1].position);
        assert!(records.windows(2).all(|w| w[0].position < w[1].position));
        for (i, t) in out.tokens.iter().enumerate() {
            let attacked = records.iter().any(|r| r.position == i);
            assert_eq!(attacked, t != &doc.tokens[i], "position {i}");
        }
        // "old-form" has a hyphen and "." is punctuation: never attacked
        assert!(records.iter().all(|r| r.position != 0 && r.position != 5));
    }

    #[test]
    fn perturb_document_is_deterministic_per_seed() {
        let corpus = small_corpus();
        let doc = sample_doc();
        let cfg = AttackConfig::new(AttackKind::Random, 2, 33);
        let a = perturb_document(&doc, &cfg, &corpus).unwrap();
        let b = perturb_document(&doc, &cfg, &corpus).unwrap();
        assert_eq!(a, b);
        let other = AttackConfig::new(AttackKind::Random, 2, 34);
        assert_ne!(perturb_document(&doc, &other, &corpus).unwrap(), a);
    }

    #[test]
    fn perturb_document_rejects_when_not_enough_attackable() {
        let corpus = small_corpus();
        let doc = sample_doc();
        // swap needs length >= 4 with a distinct interior pair:
        // only "moviemaking" and "best" qualify among alphabetic tokens
        let cfg = AttackConfig::new(AttackKind::Swap, 3, 9);
        assert!(matches!(
            perturb_document(&doc, &cfg, &corpus),
            Err(AttackError::NotEnoughAttackableTokens {
                needed: 3,
                available: 2,
                ..
            })
        ));
    }

    #[test]
    fn oracle_returns_first_flipping_candidate() {
        let corpus = small_corpus();
        let doc = sample_doc();
        let cfg = AttackConfig::new(AttackKind::Insertion, 1, 17);
        // enumerate candidates under a constant model, then flip on #7 only
        let constant = |_: &Document| (1usize, 0.9f64);
        let outcome = oracle_attack_detailed(&doc, &constant, &cfg, &corpus, 50).unwrap();
        let target = outcome.candidates[7].document.clone();
        let stub = move |d: &Document| {
            if d.tokens == target.tokens {
                (0usize, 0.8f64)
            } else {
                (1usize, 0.9f64)
            }
        };
        let outcome = oracle_attack_detailed(&doc, &stub, &cfg, &corpus, 50).unwrap();
        assert!(outcome.flipped);
        assert_eq!(outcome.chosen, 7);
        let (chosen_doc, _) = oracle_attack(&doc, &stub, &cfg, &corpus, 50).unwrap();
        assert_eq!(chosen_doc.tokens, outcome.candidates[7].document.tokens);
    }

    #[test]
    fn oracle_without_flip_picks_minimum_confidence_with_index_tiebreak() {
        let corpus = small_corpus();
        let doc = sample_doc();
        let cfg = AttackConfig::new(AttackKind::Insertion, 1, 17);

        // constant confidence: candidate 0 wins the tie
        let constant = |_: &Document| (1usize, 0.75f64);
        let outcome = oracle_attack_detailed(&doc, &constant, &cfg, &corpus, 50).unwrap();
        assert!(!outcome.flipped);
        assert_eq!(outcome.chosen, 0);
    }
}
