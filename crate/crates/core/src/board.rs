//! The Worker's work area.
//!
//! Mutating operations validate before touching state, so a rejected
//! operation leaves the board unchanged.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{GridSize, PieceCatalog, PieceId, Placement, Rotation, TargetSolution};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum BoardError {
    #[error("unknown piece {piece_id}")]
    UnknownPiece { piece_id: PieceId },
    #[error("cell ({row},{col}) is already occupied")]
    CellOccupied { row: u32, col: u32 },
    #[error("cell ({row},{col}) is outside the board")]
    OutOfBounds { row: u32, col: u32 },
    #[error("piece {piece_id} is already on the board")]
    AlreadyPlaced { piece_id: PieceId },
    #[error("piece {piece_id} is not on the board")]
    NotPlaced { piece_id: PieceId },
    #[error("invalid rotation angle {degrees}: use 90, 180 or 270")]
    InvalidAngle { degrees: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellEntry {
    pub row: u32,
    pub col: u32,
    pub piece_id: PieceId,
    pub rotation: Rotation,
}

impl From<CellEntry> for Placement {
    fn from(c: CellEntry) -> Self {
        Placement { piece_id: c.piece_id, row: c.row, col: c.col, rotation: c.rotation }
    }
}

/// Board contents without the palette, as sent to the Helper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardView {
    pub grid: GridSize,
    pub cells: Vec<CellEntry>,
}

/// Wire and log form of a board: `{grid, cells, available}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BoardRecord {
    grid: GridSize,
    cells: Vec<CellEntry>,
    available: Vec<PieceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BoardRecord", try_from = "BoardRecord")]
pub struct BoardState {
    grid: GridSize,
    cells: BTreeMap<(u32, u32), (PieceId, Rotation)>,
    available: BTreeSet<PieceId>,
}

impl BoardState {
    /// Empty board holding every catalog piece in the palette.
    pub fn new(grid: GridSize, catalog: &PieceCatalog) -> BoardState {
        BoardState::with_pieces(grid, catalog.ids())
    }

    pub fn with_pieces(grid: GridSize, pieces: impl IntoIterator<Item = PieceId>) -> BoardState {
        BoardState { grid, cells: BTreeMap::new(), available: pieces.into_iter().collect() }
    }

    pub fn grid(&self) -> GridSize {
        self.grid
    }

    pub fn available(&self) -> &BTreeSet<PieceId> {
        &self.available
    }

    pub fn at(&self, row: u32, col: u32) -> Option<(PieceId, Rotation)> {
        self.cells.get(&(row, col)).copied()
    }

    pub fn position_of(&self, piece_id: PieceId) -> Option<CellEntry> {
        self.entries().find(|c| c.piece_id == piece_id)
    }

    /// Occupied cells in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = CellEntry> + '_ {
        self.cells
            .iter()
            .map(|(&(row, col), &(piece_id, rotation))| CellEntry { row, col, piece_id, rotation })
    }

    pub fn placed_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn is_placed(&self, piece_id: PieceId) -> bool {
        self.cells.values().any(|(id, _)| *id == piece_id)
    }

    fn check_known(&self, piece_id: PieceId) -> Result<(), BoardError> {
        if self.available.contains(&piece_id) || self.is_placed(piece_id) {
            Ok(())
        } else {
            Err(BoardError::UnknownPiece { piece_id })
        }
    }

    pub fn place(&mut self, piece_id: PieceId, row: u32, col: u32) -> Result<(), BoardError> {
        self.check_known(piece_id)?;
        if !self.grid.contains(row, col) {
            return Err(BoardError::OutOfBounds { row, col });
        }
        if !self.available.contains(&piece_id) {
            return Err(BoardError::AlreadyPlaced { piece_id });
        }
        if self.cells.contains_key(&(row, col)) {
            return Err(BoardError::CellOccupied { row, col });
        }
        self.available.remove(&piece_id);
        self.cells.insert((row, col), (piece_id, Rotation::Deg0));
        Ok(())
    }

    pub fn rotate(&mut self, piece_id: PieceId, degrees: u32) -> Result<(), BoardError> {
        self.check_known(piece_id)?;
        let by = match Rotation::from_degrees(degrees) {
            Some(r) if r != Rotation::Deg0 => r,
            _ => return Err(BoardError::InvalidAngle { degrees }),
        };
        let slot = self
            .cells
            .values_mut()
            .find(|(id, _)| *id == piece_id)
            .ok_or(BoardError::NotPlaced { piece_id })?;
        slot.1 = slot.1.turned_by(by);
        Ok(())
    }

    /// Clears the piece's cell and returns it to the palette with rotation reset.
    pub fn remove(&mut self, piece_id: PieceId) -> Result<(), BoardError> {
        self.check_known(piece_id)?;
        let key = self
            .cells
            .iter()
            .find(|(_, (id, _))| *id == piece_id)
            .map(|(k, _)| *k)
            .ok_or(BoardError::NotPlaced { piece_id })?;
        self.cells.remove(&key);
        self.available.insert(piece_id);
        Ok(())
    }

    pub fn view(&self) -> BoardView {
        BoardView { grid: self.grid, cells: self.entries().collect() }
    }

    /// Placements currently on the board, as a set.
    pub fn placements(&self) -> BTreeSet<Placement> {
        self.entries().map(Placement::from).collect()
    }
}

impl From<BoardState> for BoardRecord {
    fn from(b: BoardState) -> Self {
        BoardRecord { grid: b.grid, cells: b.entries().collect(), available: b.available.into_iter().collect() }
    }
}

impl TryFrom<BoardRecord> for BoardState {
    type Error = String;

    fn try_from(r: BoardRecord) -> Result<Self, Self::Error> {
        let mut cells = BTreeMap::new();
        let mut seen: BTreeSet<PieceId> = BTreeSet::new();
        for c in r.cells {
            if !r.grid.contains(c.row, c.col) {
                return Err(format!("cell ({},{}) outside grid", c.row, c.col));
            }
            if !seen.insert(c.piece_id) || cells.insert((c.row, c.col), (c.piece_id, c.rotation)).is_some() {
                return Err(format!("duplicate piece or cell at ({},{})", c.row, c.col));
            }
        }
        let available: BTreeSet<PieceId> = r.available.into_iter().collect();
        if available.iter().any(|id| seen.contains(id)) {
            return Err("piece listed as both placed and available".into());
        }
        Ok(BoardState { grid: r.grid, cells, available })
    }
}

/// Whether orientation counts toward an exact match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub rotation_sensitive: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy { rotation_sensitive: true }
    }
}

/// True iff the board holds exactly the target's placements: nothing
/// missing, nothing extra.
pub fn exact_match(board: &BoardState, target: &TargetSolution, policy: MatchPolicy) -> bool {
    if board.placed_count() != target.placements.len() {
        return false;
    }
    target.placements.iter().all(|p| match board.at(p.row, p.col) {
        Some((id, rot)) => id == p.piece_id && (!policy.rotation_sensitive || rot == p.rotation),
        None => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board() -> BoardState {
        BoardState::new(GridSize { rows: 3, cols: 3 }, &PieceCatalog::default_bundled())
    }

    #[test]
    fn place_sets_zero_rotation() {
        let mut b = board();
        b.place(PieceId(18), 0, 0).unwrap();
        assert_eq!(b.at(0, 0), Some((PieceId(18), Rotation::Deg0)));
        assert!(!b.available().contains(&PieceId(18)));

        let mut b = board();
        b.place(PieceId(10), 1, 0).unwrap();
        assert_eq!(b.at(1, 0), Some((PieceId(10), Rotation::Deg0)));
    }

    #[test]
    fn place_errors() {
        let mut b = board();
        b.place(PieceId(18), 0, 0).unwrap();
        let before = b.clone();
        assert_eq!(b.place(PieceId(10), 0, 0), Err(BoardError::CellOccupied { row: 0, col: 0 }));
        assert_eq!(b.place(PieceId(18), 1, 1), Err(BoardError::AlreadyPlaced { piece_id: PieceId(18) }));
        assert_eq!(b.place(PieceId(99), 1, 1), Err(BoardError::UnknownPiece { piece_id: PieceId(99) }));
        assert_eq!(b.place(PieceId(10), 3, 0), Err(BoardError::OutOfBounds { row: 3, col: 0 }));
        assert_eq!(b, before);
    }

    #[test]
    fn rotate_wraps_and_requires_placement() {
        let mut b = board();
        assert_eq!(b.rotate(PieceId(18), 90), Err(BoardError::NotPlaced { piece_id: PieceId(18) }));
        b.place(PieceId(18), 0, 0).unwrap();
        b.rotate(PieceId(18), 90).unwrap();
        assert_eq!(b.at(0, 0).unwrap().1, Rotation::Deg90);
        b.rotate(PieceId(18), 180).unwrap();
        b.rotate(PieceId(18), 90).unwrap();
        assert_eq!(b.at(0, 0).unwrap().1, Rotation::Deg0);
        assert_eq!(b.rotate(PieceId(18), 45), Err(BoardError::InvalidAngle { degrees: 45 }));
        assert_eq!(b.rotate(PieceId(18), 0), Err(BoardError::InvalidAngle { degrees: 0 }));
    }

    #[test]
    fn remove_restores_and_resets_rotation() {
        let empty = board();
        let mut b = empty.clone();
        b.place(PieceId(18), 0, 0).unwrap();
        b.rotate(PieceId(18), 90).unwrap();
        b.remove(PieceId(18)).unwrap();
        assert_eq!(b, empty);
        b.place(PieceId(18), 0, 0).unwrap();
        assert_eq!(b.at(0, 0).unwrap().1, Rotation::Deg0);
        assert_eq!(empty.clone().remove(PieceId(3)), Err(BoardError::NotPlaced { piece_id: PieceId(3) }));
    }

    #[test]
    fn exact_match_cases() {
        let puzzle = crate::catalog::Puzzle::default_bundled();
        let target = &puzzle.trials.trials[0];
        let empty = BoardState::new(puzzle.trials.grid, &puzzle.catalog);
        assert!(!exact_match(&empty, target, MatchPolicy::default()));

        let mut b = empty.clone();
        for p in &target.placements {
            b.place(p.piece_id, p.row, p.col).unwrap();
            if p.rotation != Rotation::Deg0 {
                b.rotate(p.piece_id, p.rotation.degrees()).unwrap();
            }
        }
        assert!(exact_match(&b, target, MatchPolicy::default()));

        // piece 5 sits at 90 in the target; turn it once more
        let mut off = b.clone();
        off.rotate(PieceId(5), 90).unwrap();
        assert!(!exact_match(&off, target, MatchPolicy::default()));
        assert!(exact_match(&off, target, MatchPolicy { rotation_sensitive: false }));

        let mut extra = b.clone();
        extra.place(PieceId(1), 2, 2).unwrap();
        assert!(!exact_match(&extra, target, MatchPolicy::default()));
    }

    #[test]
    fn serialization_round_trip() {
        let mut b = board();
        b.place(PieceId(18), 0, 0).unwrap();
        b.rotate(PieceId(18), 270).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.starts_with(r#"{"grid":{"rows":3,"cols":3},"cells":[{"row":0,"col":0,"piece_id":18,"rotation":270}],"available":[0,"#));
        let back: BoardState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }
}
