//! PNG rendering of a board for vision-capable models.
//!
//! Each piece is a tile filled with its color, overlaid with a simple
//! pattern glyph and a dark notch marking the piece's top edge, so the
//! orientation is visible.

use std::io::Cursor;

use cgbench_core::board::BoardView;
use cgbench_core::catalog::{PieceCatalog, Rotation};
use image::{ImageFormat, Rgb, RgbImage};

const CELL: u32 = 64;
const BORDER: u32 = 2;

fn color_rgb(name: &str) -> Rgb<u8> {
    match name {
        "pink" => Rgb([240, 150, 190]),
        "white" => Rgb([245, 245, 245]),
        "yellow" => Rgb([245, 215, 60]),
        "green" => Rgb([90, 170, 90]),
        "cream" => Rgb([235, 220, 180]),
        "red" => Rgb([210, 50, 50]),
        other => {
            let h = other.bytes().fold(7u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32));
            Rgb([(h & 0xff) as u8, (h >> 8 & 0xff) as u8, (h >> 16 & 0xff) as u8])
        }
    }
}

/// Whether local pixel (x, y) of an unrotated tile is inked for `pattern`.
fn pattern_ink(pattern: &str, x: u32, y: u32) -> bool {
    let (cx, cy) = (x as i32 - CELL as i32 / 2, y as i32 - CELL as i32 / 2);
    match pattern {
        "stripes" => (x / 8).is_multiple_of(2),
        "checkerboard" => ((x / 16) + (y / 16)).is_multiple_of(2),
        "diamond" => cx.abs() + cy.abs() < 22 && cx.abs() + cy.abs() > 14,
        "spiral" => {
            let r = ((cx * cx + cy * cy) as f64).sqrt();
            let a = (cy as f64).atan2(cx as f64);
            ((r - 4.0 * a).rem_euclid(12.0)) < 4.0 && r < 28.0
        }
        _ => false,
    }
}

// Map a pixel of the drawn (rotated) tile back to the unrotated tile.
fn unrotate(x: u32, y: u32, rotation: Rotation) -> (u32, u32) {
    let m = CELL - 1;
    match rotation {
        Rotation::Deg0 => (x, y),
        Rotation::Deg90 => (y, m - x),
        Rotation::Deg180 => (m - x, m - y),
        Rotation::Deg270 => (m - y, x),
    }
}

pub fn render_board_png(board: &BoardView, catalog: &PieceCatalog) -> Vec<u8> {
    let width = board.grid.cols * CELL + (board.grid.cols + 1) * BORDER;
    let height = board.grid.rows * CELL + (board.grid.rows + 1) * BORDER;
    let mut img = RgbImage::from_pixel(width, height, Rgb([60, 60, 60]));
    for (row, col) in board.grid.cells() {
        let (x0, y0) = (BORDER + col * (CELL + BORDER), BORDER + row * (CELL + BORDER));
        let entry = board.cells.iter().find(|c| c.row == row && c.col == col);
        let piece = entry.and_then(|e| catalog.get(e.piece_id));
        for y in 0..CELL {
            for x in 0..CELL {
                let px = match (entry, piece) {
                    (Some(e), Some(p)) => {
                        let (ux, uy) = unrotate(x, y, e.rotation);
                        if uy < 6 && (CELL / 2 - 6..CELL / 2 + 6).contains(&ux) {
                            Rgb([20, 20, 20])
                        } else if pattern_ink(&p.pattern, ux, uy) {
                            let Rgb([r, g, b]) = color_rgb(&p.color);
                            Rgb([r / 2, g / 2, b / 2])
                        } else {
                            color_rgb(&p.color)
                        }
                    }
                    _ => Rgb([200, 200, 200]),
                };
                img.put_pixel(x0 + x, y0 + y, px);
            }
        }
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encoding to memory");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgbench_core::board::BoardState;
    use cgbench_core::catalog::{PieceId, Puzzle};

    #[test]
    fn renders_png_with_rotation_visible() {
        let puzzle = Puzzle::default_bundled();
        let mut b = BoardState::new(puzzle.trials.grid, &puzzle.catalog);
        b.place(PieceId(18), 0, 0).unwrap();
        let upright = render_board_png(&b.view(), &puzzle.catalog);
        assert_eq!(&upright[..8], b"\x89PNG\r\n\x1a\n");
        b.rotate(PieceId(18), 90).unwrap();
        let turned = render_board_png(&b.view(), &puzzle.catalog);
        assert_ne!(upright, turned);
        let img = image::load_from_memory(&turned).unwrap();
        assert_eq!((img.width(), img.height()), (3 * CELL + 4 * BORDER, 3 * CELL + 4 * BORDER));
    }
}
