//! Deterministic toy vision encoder.
//!
//! Real image backbones are far outside desk scale, so the "image" here is
//! a `g×g` grid of small integers and the frozen encoder is a symbol
//! embedding plus a position embedding per cell: one feature row per cell,
//! `z ∈ R^{c×d_v}` with `c = g²`. That is enough to give the rest of the
//! pipeline what it actually depends on — a deterministic, per-image,
//! position-aware feature matrix whose width `d_v` is deliberately not the
//! LM's or the generator's hidden size.
//!
//! The encoder is always frozen; nothing here ever receives gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Shape, Tensor};

/// Encoder shape parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisionConfig {
    /// Grid side length; the image has `g²` cells.
    pub g: usize,
    /// Number of distinct cell symbols.
    pub alphabet: usize,
    /// Feature width of each `z` row.
    pub d_v: usize,
}

impl VisionConfig {
    /// Feature rows per image.
    pub fn c(&self) -> usize {
        self.g * self.g
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("g", self.g), ("alphabet", self.alphabet), ("d_v", self.d_v)] {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("vision.{name} must be >= 1")));
            }
        }
        if self.alphabet > 64 {
            return Err(Error::InvalidConfig(format!(
                "vision.alphabet = {} exceeds the supported 64 symbols",
                self.alphabet
            )));
        }
        Ok(())
    }
}

/// A `g×g` grid of cell symbols in reading order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticImage {
    g: usize,
    cells: Vec<u8>,
}

impl SyntheticImage {
    pub fn new(g: usize, cells: Vec<u8>, alphabet: usize) -> Result<Self> {
        if cells.len() != g * g {
            return Err(Error::shape(
                "synthetic_image",
                format!("{}x{} grid needs {} cells, got {}", g, g, g * g, cells.len()),
            ));
        }
        if let Some(&bad) = cells.iter().find(|&&s| s as usize >= alphabet) {
            return Err(Error::SymbolOutOfRange {
                symbol: bad as usize,
                alphabet,
            });
        }
        Ok(SyntheticImage { g, cells })
    }

    /// Uniformly random grid.
    pub fn random(g: usize, alphabet: usize, rng: &mut Rng) -> Self {
        let cells = (0..g * g).map(|_| rng.below(alphabet) as u8).collect();
        SyntheticImage { g, cells }
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Parses the one-line text form: `g²` space-separated integers.
    pub fn from_line(line: &str, g: usize, alphabet: usize) -> Result<Self> {
        let mut cells = Vec::with_capacity(g * g);
        for word in line.split_whitespace() {
            let symbol: u8 = word
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("unreadable image cell {word:?}")))?;
            cells.push(symbol);
        }
        SyntheticImage::new(g, cells, alphabet)
    }

    /// One line of space-separated cell symbols, reading order.
    pub fn to_line(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.cells.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{c}"));
        }
        out
    }
}

/// Per-image feature matrix `z` of shape `c×d_v`.
#[derive(Debug, Clone)]
pub struct VisualFeatures<T: Element> {
    pub z: Tensor<T>,
}

/// Frozen symbol + position embedding tables.
#[derive(Debug, Clone)]
pub struct VisionEncoder<T: Element> {
    pub cfg: VisionConfig,
    pub symbols: Tensor<T>,
    pub positions: Tensor<T>,
}

impl<T: Element> VisionEncoder<T> {
    pub fn init(cfg: &VisionConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let symbols = Tensor::randn(Shape::matrix(cfg.alphabet, cfg.d_v), 0.02, rng);
        let positions = Tensor::randn(Shape::matrix(cfg.c(), cfg.d_v), 0.02, rng);
        Ok(VisionEncoder {
            cfg: cfg.clone(),
            symbols,
            positions,
        })
    }

    /// Row `i` of `z` is `symbols[cell_i] + positions[i]`.
    pub fn encode(&self, img: &SyntheticImage) -> Result<VisualFeatures<T>> {
        if img.g() != self.cfg.g {
            return Err(Error::shape(
                "encode_image",
                format!("image grid {} but encoder expects {}", img.g(), self.cfg.g),
            ));
        }
        if let Some(&bad) = img.cells().iter().find(|&&s| (s as usize) >= self.cfg.alphabet) {
            return Err(Error::SymbolOutOfRange {
                symbol: bad as usize,
                alphabet: self.cfg.alphabet,
            });
        }
        let ids: Vec<usize> = img.cells().iter().map(|&s| s as usize).collect();
        let z = self.symbols.embed(&ids)?.add(&self.positions)?;
        Ok(VisualFeatures { z })
    }

    /// Frozen tables under their checkpoint names.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        alloc::vec![
            (String::from("vision.symbols"), self.symbols.clone()),
            (String::from("vision.positions"), self.positions.clone()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use alloc::vec::Vec;

    use super::*;

    fn cfg() -> VisionConfig {
        VisionConfig {
            g: 4,
            alphabet: 16,
            d_v: 8,
        }
    }

    #[test]
    fn feature_matrix_has_one_row_per_cell() {
        let mut rng = Rng::new(1);
        let enc = VisionEncoder::<f32>::init(&cfg(), &mut rng).unwrap();
        let img = SyntheticImage::random(4, 16, &mut rng);
        let z = enc.encode(&img).unwrap().z;
        assert_eq!(z.shape().dims(), &[16, 8]);
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut rng = Rng::new(2);
        let enc = VisionEncoder::<f32>::init(&cfg(), &mut rng).unwrap();
        let img = SyntheticImage::random(4, 16, &mut rng);
        let a: Vec<u32> = enc.encode(&img).unwrap().z.to_vec().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = enc.encode(&img).unwrap().z.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn single_cell_edit_moves_exactly_one_feature_row() {
        let mut rng = Rng::new(3);
        let enc = VisionEncoder::<f64>::init(&cfg(), &mut rng).unwrap();
        let mut cells = vec![0u8; 16];
        cells[5] = 1;
        let base = SyntheticImage::new(4, vec![0; 16], 16).unwrap();
        let edited = SyntheticImage::new(4, cells, 16).unwrap();
        let za = enc.encode(&base).unwrap().z.to_vec();
        let zb = enc.encode(&edited).unwrap().z.to_vec();
        for row in 0..16 {
            let same = za[row * 8..(row + 1) * 8] == zb[row * 8..(row + 1) * 8];
            assert_eq!(same, row != 5, "row {row}");
        }
    }

    #[test]
    fn distinct_symbols_make_distinct_rows_at_a_fixed_position() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let enc = VisionEncoder::<f64>::init(&cfg(), &mut rng).unwrap();
            let mut rows: Vec<Vec<u64>> = Vec::new();
            for s in 0..16u8 {
                let mut cells = vec![0u8; 16];
                cells[0] = s;
                let img = SyntheticImage::new(4, cells, 16).unwrap();
                let z = enc.encode(&img).unwrap().z.to_vec();
                rows.push(z[0..8].iter().map(|v| v.to_bits()).collect());
            }
            rows.sort();
            rows.dedup();
            assert_eq!(rows.len(), 16, "seed {seed}");
        }
    }

    #[test]
    fn image_construction_rejects_bad_symbols_and_sizes() {
        assert!(SyntheticImage::new(2, vec![0, 1, 2], 16).is_err());
        assert!(SyntheticImage::new(2, vec![0, 1, 2, 16], 16).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let img = SyntheticImage::new(2, vec![3, 0, 15, 7], 16).unwrap();
        let line = img.to_line();
        assert_eq!(line, "3 0 15 7");
        assert_eq!(SyntheticImage::from_line(&line, 2, 16).unwrap(), img);
    }

    #[test]
    fn encoder_tables_never_require_grad() {
        let mut rng = Rng::new(4);
        let enc = VisionEncoder::<f32>::init(&cfg(), &mut rng).unwrap();
        for (_, p) in enc.named_params() {
            assert!(!p.requires_grad());
        }
    }
}
