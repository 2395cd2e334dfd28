//! Piece inventory and per-trial target solutions.
//!
//! Both are loaded from one human-editable TOML document:
//!
//! ```toml
//! piece_count = 2
//! practice = [{ piece_id = 0, row = 0, col = 0, rotation = 0 }, ...]
//! trials = [[...4 placements...], [...], [...], [...]]
//!
//! [grid]
//! rows = 3
//! cols = 3
//!
//! [[pieces]]
//! id = 0
//! color = "pink"
//! pattern = "spiral"
//! ```
//!
//! `practice`, `trials` and `grid` are only required by [`load_trial_set`].
//! [`save_puzzle`] and [`save_catalog`] produce the canonical byte-stable form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of pieces in every target pattern.
pub const PIECES_PER_TARGET: usize = 4;
/// Number of scored trials following the practice trial.
pub const SCORED_TRIALS: usize = 4;

const DEFAULT_PUZZLE: &str = include_str!("../assets/default_puzzle.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("malformed document: {0}")]
    Parse(String),
    #[error("missing field `{field}` in {location}")]
    MissingField { location: String, field: &'static str },
    #[error("duplicate piece id {0}")]
    DuplicateId(u32),
    #[error("declared piece_count {declared} but document lists {actual} pieces")]
    CountMismatch { declared: usize, actual: usize },
    #[error("catalog has no pieces")]
    Empty,
    #[error("invalid token {value:?} for {field} of piece {id}: expected a lowercase word")]
    InvalidToken { id: u32, field: &'static str, value: String },
    #[error("grid must be at least 2x2, got {rows}x{cols}")]
    InvalidGrid { rows: u32, cols: u32 },
    #[error("trial {trial}: unknown piece id {id}")]
    UnknownPiece { trial: u32, id: u32 },
    #[error("trial {trial}: placement ({row},{col}) is outside the {rows}x{cols} grid")]
    OutOfBounds { trial: u32, row: u32, col: u32, rows: u32, cols: u32 },
    #[error("trial {trial}: cell ({row},{col}) used twice")]
    DuplicateCell { trial: u32, row: u32, col: u32 },
    #[error("trial {trial}: piece {id} used twice")]
    DuplicatePiece { trial: u32, id: u32 },
    #[error("trial {trial}: expected {PIECES_PER_TARGET} placements, found {found}")]
    PlacementCount { trial: u32, found: usize },
    #[error("expected {SCORED_TRIALS} scored trials, found {0}")]
    TrialCount(usize),
    #[error("trial {trial} uses a different set of pieces than trial 1")]
    PieceSetMismatch { trial: u32 },
    #[error("invalid rotation {0}: must be one of 0, 90, 180, 270")]
    InvalidRotation(u32),
}

/// Identifier of a piece, as surfaced in dialogue ("ID 18").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PieceId(pub u32);

impl fmt::Display for PieceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Orientation of a placed piece in quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Rotation {
    #[default]
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::Deg0, Rotation::Deg90, Rotation::Deg180, Rotation::Deg270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::Deg0 => 0,
            Rotation::Deg90 => 90,
            Rotation::Deg180 => 180,
            Rotation::Deg270 => 270,
        }
    }

    pub fn from_degrees(degrees: u32) -> Option<Rotation> {
        match degrees {
            0 => Some(Rotation::Deg0),
            90 => Some(Rotation::Deg90),
            180 => Some(Rotation::Deg180),
            270 => Some(Rotation::Deg270),
            _ => None,
        }
    }

    /// Clockwise composition, modulo a full turn.
    pub fn turned_by(self, other: Rotation) -> Rotation {
        Rotation::from_degrees((self.degrees() + other.degrees()) % 360).expect("closed under addition")
    }

    /// The rotation that takes `self` to `target`.
    pub fn delta_to(self, target: Rotation) -> Rotation {
        Rotation::from_degrees((target.degrees() + 360 - self.degrees()) % 360).expect("closed under subtraction")
    }
}

impl TryFrom<u32> for Rotation {
    type Error = CatalogError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Rotation::from_degrees(value).ok_or(CatalogError::InvalidRotation(value))
    }
}

impl From<Rotation> for u32 {
    fn from(value: Rotation) -> Self {
        value.degrees()
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub rows: u32,
    pub cols: u32,
}

impl GridSize {
    pub fn contains(&self, row: u32, col: u32) -> bool {
        row < self.rows && col < self.cols
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }
}

impl Default for GridSize {
    fn default() -> Self {
        GridSize { rows: 3, cols: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    pub id: PieceId,
    pub color: String,
    pub pattern: String,
    pub image_ref: String,
}

impl Piece {
    /// Plain description without the identifier, e.g. "pink piece with a spiral pattern".
    pub fn describe(&self) -> String {
        format!("{} piece with a {} pattern", self.color, self.pattern)
    }
}

/// Color and pattern vocabulary of a catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub colors: BTreeSet<String>,
    pub patterns: BTreeSet<String>,
}

impl Lexicon {
    pub fn contains(&self, token: &str) -> bool {
        self.colors.contains(token) || self.patterns.contains(token)
    }

    pub fn is_color(&self, token: &str) -> bool {
        self.colors.contains(token)
    }

    pub fn is_pattern(&self, token: &str) -> bool {
        self.patterns.contains(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.colors.union(&self.patterns).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.colors.union(&self.patterns).count()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty() && self.patterns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PieceCatalog {
    pieces: Vec<Piece>,
    index: BTreeMap<PieceId, usize>,
    lexicon: Lexicon,
}

impl PieceCatalog {
    pub fn new(pieces: Vec<Piece>) -> Result<Self, CatalogError> {
        if pieces.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut index = BTreeMap::new();
        let mut lexicon = Lexicon::default();
        for (i, piece) in pieces.iter().enumerate() {
            if index.insert(piece.id, i).is_some() {
                return Err(CatalogError::DuplicateId(piece.id.0));
            }
            check_token(piece.id, "color", &piece.color)?;
            check_token(piece.id, "pattern", &piece.pattern)?;
            lexicon.colors.insert(piece.color.clone());
            lexicon.patterns.insert(piece.pattern.clone());
        }
        Ok(PieceCatalog { pieces, index, lexicon })
    }

    /// The bundled 24-piece catalog.
    pub fn default_bundled() -> PieceCatalog {
        load_catalog(DEFAULT_PUZZLE).expect("bundled catalog is valid")
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn get(&self, id: PieceId) -> Option<&Piece> {
        self.index.get(&id).map(|&i| &self.pieces[i])
    }

    pub fn contains(&self, id: PieceId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = PieceId> + '_ {
        self.pieces.iter().map(|p| p.id)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        sha256_hex(save_catalog(self).as_bytes())
    }
}

fn check_token(id: PieceId, field: &'static str, value: &str) -> Result<(), CatalogError> {
    let ok = !value.is_empty()
        && value.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-');
    if ok {
        Ok(())
    } else {
        Err(CatalogError::InvalidToken { id: id.0, field, value: value.to_string() })
    }
}

/// One piece of a target pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub piece_id: PieceId,
    pub row: u32,
    pub col: u32,
    pub rotation: Rotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSolution {
    pub trial_index: u32,
    pub placements: Vec<Placement>,
}

impl TargetSolution {
    pub fn piece_ids(&self) -> BTreeSet<PieceId> {
        self.placements.iter().map(|p| p.piece_id).collect()
    }

    /// Placements in row-major order of their cells.
    pub fn row_major(&self) -> Vec<Placement> {
        let mut v = self.placements.clone();
        v.sort_by_key(|p| (p.row, p.col));
        v
    }

    pub fn placement_of(&self, id: PieceId) -> Option<&Placement> {
        self.placements.iter().find(|p| p.piece_id == id)
    }
}

/// Practice target plus the four scored targets. Trial index 0 is the
/// practice trial; 1..=4 are scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSet {
    pub grid: GridSize,
    pub practice: TargetSolution,
    pub trials: Vec<TargetSolution>,
}

impl TrialSet {
    pub fn default_bundled(catalog: &PieceCatalog) -> TrialSet {
        load_trial_set(DEFAULT_PUZZLE, catalog).expect("bundled trial set is valid")
    }

    /// Total number of trials including practice.
    pub fn len(&self) -> usize {
        1 + self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn target(&self, trial_index: u32) -> Option<&TargetSolution> {
        match trial_index {
            0 => Some(&self.practice),
            i => self.trials.get(i as usize - 1),
        }
    }

    pub fn is_scored(trial_index: u32) -> bool {
        trial_index > 0
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("trial set serializes").as_bytes())
    }
}

/// Catalog and trial set loaded from one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Puzzle {
    pub catalog: PieceCatalog,
    pub trials: TrialSet,
}

impl Puzzle {
    pub fn default_bundled() -> Puzzle {
        load_puzzle(DEFAULT_PUZZLE).expect("bundled puzzle is valid")
    }
}

impl Default for Puzzle {
    fn default() -> Self {
        Puzzle::default_bundled()
    }
}

pub fn default_puzzle_source() -> &'static str {
    DEFAULT_PUZZLE
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// Raw document shapes: everything optional so missing fields get precise errors.

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    piece_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    practice: Option<Vec<RawPlacement>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<Vec<Vec<RawPlacement>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<GridSize>,
    #[serde(default)]
    pieces: Vec<RawPiece>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPiece {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    color: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pattern: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_ref: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlacement {
    piece_id: u32,
    row: u32,
    col: u32,
    #[serde(default)]
    rotation: u32,
}

fn parse_raw(source: &str) -> Result<RawDocument, CatalogError> {
    toml::from_str(source).map_err(|e| CatalogError::Parse(e.to_string()))
}

pub fn load_catalog(source: &str) -> Result<PieceCatalog, CatalogError> {
    catalog_from_raw(&parse_raw(source)?)
}

fn catalog_from_raw(raw: &RawDocument) -> Result<PieceCatalog, CatalogError> {
    let declared = raw.piece_count.ok_or(CatalogError::MissingField {
        location: "document".into(),
        field: "piece_count",
    })?;
    let mut pieces = Vec::with_capacity(raw.pieces.len());
    for (i, rp) in raw.pieces.iter().enumerate() {
        let location = || format!("pieces[{i}]");
        let id = rp.id.ok_or_else(|| CatalogError::MissingField { location: location(), field: "id" })?;
        let color = rp
            .color
            .clone()
            .ok_or_else(|| CatalogError::MissingField { location: location(), field: "color" })?;
        let pattern = rp
            .pattern
            .clone()
            .ok_or_else(|| CatalogError::MissingField { location: location(), field: "pattern" })?;
        let image_ref = rp.image_ref.clone().unwrap_or_else(|| format!("{color}-{pattern}"));
        pieces.push(Piece { id: PieceId(id), color, pattern, image_ref });
    }
    if declared != pieces.len() {
        return Err(CatalogError::CountMismatch { declared, actual: pieces.len() });
    }
    PieceCatalog::new(pieces)
}

pub fn load_trial_set(source: &str, catalog: &PieceCatalog) -> Result<TrialSet, CatalogError> {
    trial_set_from_raw(&parse_raw(source)?, catalog)
}

pub fn load_puzzle(source: &str) -> Result<Puzzle, CatalogError> {
    let raw = parse_raw(source)?;
    let catalog = catalog_from_raw(&raw)?;
    let trials = trial_set_from_raw(&raw, &catalog)?;
    Ok(Puzzle { catalog, trials })
}

fn trial_set_from_raw(raw: &RawDocument, catalog: &PieceCatalog) -> Result<TrialSet, CatalogError> {
    let missing = |field| CatalogError::MissingField { location: "document".into(), field };
    let grid = raw.grid.ok_or(missing("grid"))?;
    if grid.rows < 2 || grid.cols < 2 {
        return Err(CatalogError::InvalidGrid { rows: grid.rows, cols: grid.cols });
    }
    let practice = raw.practice.as_ref().ok_or(missing("practice"))?;
    let trials = raw.trials.as_ref().ok_or(missing("trials"))?;
    if trials.len() != SCORED_TRIALS {
        return Err(CatalogError::TrialCount(trials.len()));
    }
    let practice = build_target(0, practice, grid, catalog)?;
    let trials = trials
        .iter()
        .enumerate()
        .map(|(i, t)| build_target(i as u32 + 1, t, grid, catalog))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = trials[0].piece_ids();
    for t in &trials[1..] {
        if t.piece_ids() != reference {
            return Err(CatalogError::PieceSetMismatch { trial: t.trial_index });
        }
    }
    Ok(TrialSet { grid, practice, trials })
}

fn build_target(
    trial: u32,
    raw: &[RawPlacement],
    grid: GridSize,
    catalog: &PieceCatalog,
) -> Result<TargetSolution, CatalogError> {
    let mut cells = BTreeSet::new();
    let mut ids = BTreeSet::new();
    let mut placements = Vec::with_capacity(raw.len());
    for rp in raw {
        let id = PieceId(rp.piece_id);
        if !catalog.contains(id) {
            return Err(CatalogError::UnknownPiece { trial, id: rp.piece_id });
        }
        if !grid.contains(rp.row, rp.col) {
            return Err(CatalogError::OutOfBounds {
                trial,
                row: rp.row,
                col: rp.col,
                rows: grid.rows,
                cols: grid.cols,
            });
        }
        if !cells.insert((rp.row, rp.col)) {
            return Err(CatalogError::DuplicateCell { trial, row: rp.row, col: rp.col });
        }
        if !ids.insert(id) {
            return Err(CatalogError::DuplicatePiece { trial, id: rp.piece_id });
        }
        placements.push(Placement {
            piece_id: id,
            row: rp.row,
            col: rp.col,
            rotation: Rotation::try_from(rp.rotation)?,
        });
    }
    if placements.len() != PIECES_PER_TARGET {
        return Err(CatalogError::PlacementCount { trial, found: placements.len() });
    }
    Ok(TargetSolution { trial_index: trial, placements })
}

fn raw_pieces(catalog: &PieceCatalog) -> Vec<RawPiece> {
    catalog
        .pieces()
        .iter()
        .map(|p| RawPiece {
            id: Some(p.id.0),
            color: Some(p.color.clone()),
            pattern: Some(p.pattern.clone()),
            image_ref: Some(p.image_ref.clone()),
        })
        .collect()
}

fn raw_placements(target: &TargetSolution) -> Vec<RawPlacement> {
    target
        .placements
        .iter()
        .map(|p| RawPlacement { piece_id: p.piece_id.0, row: p.row, col: p.col, rotation: p.rotation.degrees() })
        .collect()
}

/// Canonical serialization of a catalog on its own.
pub fn save_catalog(catalog: &PieceCatalog) -> String {
    let raw = RawDocument { piece_count: Some(catalog.len()), pieces: raw_pieces(catalog), ..Default::default() };
    toml::to_string(&raw).expect("catalog serializes")
}

/// Canonical serialization of a catalog together with its trial set.
pub fn save_puzzle(catalog: &PieceCatalog, trials: &TrialSet) -> String {
    let raw = RawDocument {
        piece_count: Some(catalog.len()),
        practice: Some(raw_placements(&trials.practice)),
        trials: Some(trials.trials.iter().map(raw_placements).collect()),
        grid: Some(trials.grid),
        pieces: raw_pieces(catalog),
    };
    toml::to_string(&raw).expect("puzzle serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_piece_doc(second_id: u32) -> String {
        format!(
            r#"
piece_count = 2
[[pieces]]
id = 3
color = "pink"
pattern = "spiral"
[[pieces]]
id = {second_id}
color = "yellow"
pattern = "checkerboard"
"#
        )
    }

    #[test]
    fn bundled_catalog_has_24_pieces() {
        let catalog = PieceCatalog::default_bundled();
        assert_eq!(catalog.len(), 24);
        assert_eq!(catalog.lexicon().colors.len(), 6);
        assert_eq!(catalog.lexicon().patterns.len(), 4);
        let p18 = catalog.get(PieceId(18)).unwrap();
        assert_eq!((p18.color.as_str(), p18.pattern.as_str()), ("cream", "stripes"));
    }

    #[test]
    fn bundled_trials_reuse_the_same_four_pieces() {
        let puzzle = Puzzle::default_bundled();
        assert_eq!(puzzle.trials.trials.len(), 4);
        let first = puzzle.trials.trials[0].piece_ids();
        assert_eq!(first.len(), 4);
        for t in &puzzle.trials.trials {
            assert_eq!(t.piece_ids(), first);
        }
        assert_eq!(puzzle.trials.practice.piece_ids(), first);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        assert_eq!(load_catalog(&two_piece_doc(3)), Err(CatalogError::DuplicateId(3)));
    }

    #[test]
    fn small_catalog_loads() {
        let catalog = load_catalog(&two_piece_doc(7)).unwrap();
        assert_eq!(catalog.len(), 2);
        assert_eq!(catalog.lexicon().len(), 4);
    }

    #[test]
    fn count_mismatch_and_missing_fields() {
        let doc = two_piece_doc(7).replace("piece_count = 2", "piece_count = 3");
        assert_eq!(load_catalog(&doc), Err(CatalogError::CountMismatch { declared: 3, actual: 2 }));

        let doc = two_piece_doc(7).replace("color = \"yellow\"\n", "");
        assert!(matches!(load_catalog(&doc), Err(CatalogError::MissingField { field: "color", .. })));

        let doc = two_piece_doc(7).replace("pattern = \"spiral\"\n", "");
        assert!(matches!(load_catalog(&doc), Err(CatalogError::MissingField { field: "pattern", .. })));
    }

    #[test]
    fn trial_using_a_fifth_piece_is_rejected() {
        let doc = default_puzzle_source().replacen(
            "{ piece_id = 5, row = 0, col = 1, rotation = 0 }",
            "{ piece_id = 6, row = 0, col = 1, rotation = 0 }",
            1,
        );
        let catalog = load_catalog(&doc).unwrap();
        assert_eq!(load_trial_set(&doc, &catalog), Err(CatalogError::PieceSetMismatch { trial: 2 }));
    }

    #[test]
    fn out_of_bounds_placement_is_rejected() {
        let doc = default_puzzle_source().replacen(
            "{ piece_id = 0, row = 0, col = 0, rotation = 0 }",
            "{ piece_id = 0, row = 9, col = 9, rotation = 0 }",
            1,
        );
        let catalog = load_catalog(&doc).unwrap();
        assert!(matches!(
            load_trial_set(&doc, &catalog),
            Err(CatalogError::OutOfBounds { trial: 0, row: 9, col: 9, rows: 3, cols: 3 })
        ));
    }

    #[test]
    fn unknown_piece_and_bad_rotation() {
        let doc = default_puzzle_source().replacen("piece_id = 10, row = 0, col = 1", "piece_id = 99, row = 0, col = 1", 1);
        let catalog = load_catalog(&doc).unwrap();
        assert_eq!(load_trial_set(&doc, &catalog), Err(CatalogError::UnknownPiece { trial: 0, id: 99 }));

        let doc = default_puzzle_source().replacen("rotation = 90", "rotation = 45", 1);
        let catalog = load_catalog(&doc).unwrap();
        assert_eq!(load_trial_set(&doc, &catalog), Err(CatalogError::InvalidRotation(45)));
    }

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let puzzle = Puzzle::default_bundled();
        let saved = save_puzzle(&puzzle.catalog, &puzzle.trials);
        let reloaded = load_puzzle(&saved).unwrap();
        assert_eq!(reloaded, puzzle);
        assert_eq!(save_puzzle(&reloaded.catalog, &reloaded.trials), saved);

        let saved = save_catalog(&puzzle.catalog);
        assert_eq!(load_catalog(&saved).unwrap(), puzzle.catalog);
    }

    #[test]
    fn rotation_arithmetic() {
        assert_eq!(Rotation::Deg270.turned_by(Rotation::Deg90), Rotation::Deg0);
        assert_eq!(Rotation::Deg90.delta_to(Rotation::Deg0), Rotation::Deg270);
        assert_eq!(Rotation::try_from(45), Err(CatalogError::InvalidRotation(45)));
    }
}
