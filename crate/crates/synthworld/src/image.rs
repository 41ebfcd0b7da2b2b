//! Rendering latents to PNG block grids and back.
//!
//! The first block row carries the latent bytes (magic, class, attribute
//! mask, noise seed) as grey levels; the rows below paint one coloured
//! block per present attribute over a background tinted by class.

use std::io::Cursor;

use crate::error::WorldError;

const BLOCK: usize = 4;
const COLS: usize = 16;
const ROWS: usize = 4;
pub const WIDTH: u32 = (BLOCK * COLS) as u32;
pub const HEIGHT: u32 = (BLOCK * ROWS) as u32;
const MAGIC: [u8; 3] = *b"SW1";

/// What an image depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Latent {
    pub class: u8,
    pub attributes: u32,
    pub noise_seed: u64,
}

impl Latent {
    pub fn has(&self, attr: usize) -> bool {
        self.attributes >> attr & 1 == 1
    }

    fn to_bytes(self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[..3].copy_from_slice(&MAGIC);
        b[3] = self.class;
        b[4..8].copy_from_slice(&self.attributes.to_le_bytes());
        b[8..16].copy_from_slice(&self.noise_seed.to_le_bytes());
        b
    }
}

fn hue(i: usize) -> [u8; 3] {
    // spread hues around the wheel; good enough to tell blocks apart
    let h = (i * 37 % 360) as f64 / 60.0;
    let x = (1.0 - (h % 2.0 - 1.0).abs()) * 255.0;
    let (r, g, b) = match h as u32 {
        0 => (255.0, x, 0.0),
        1 => (x, 255.0, 0.0),
        2 => (0.0, 255.0, x),
        3 => (0.0, x, 255.0),
        4 => (x, 0.0, 255.0),
        _ => (255.0, 0.0, x),
    };
    [r as u8, g as u8, b as u8]
}

pub fn render(latent: Latent) -> Vec<u8> {
    let (w, h) = (WIDTH as usize, HEIGHT as usize);
    let mut pixels = vec![0u8; w * h * 3];
    let data = latent.to_bytes();
    let tint = hue(latent.class as usize * 5 + 1).map(|c| c / 4);
    for y in 0..h {
        for x in 0..w {
            let (row, col) = (y / BLOCK, x / BLOCK);
            let px = if row == 0 {
                [data[col]; 3]
            } else {
                let slot = (row - 1) * COLS + col;
                if slot < 32 && latent.has(slot) {
                    hue(slot)
                } else {
                    tint
                }
            };
            pixels[(y * w + x) * 3..][..3].copy_from_slice(&px);
        }
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, WIDTH, HEIGHT);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    let mut writer = enc.write_header().expect("in-memory png header");
    writer.write_image_data(&pixels).expect("in-memory png data");
    writer.finish().expect("in-memory png finish");
    out
}

pub fn decode(png_bytes: &[u8]) -> Result<Latent, WorldError> {
    let bad = |m: String| WorldError::Undecodable(m);
    let decoder = png::Decoder::new(Cursor::new(png_bytes));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.width != WIDTH || info.height != HEIGHT || info.color_type != png::ColorType::Rgb {
        return Err(bad("not a synthetic-world image".into()));
    }
    let mut data = [0u8; 16];
    for (col, d) in data.iter_mut().enumerate() {
        *d = buf[col * BLOCK * 3];
    }
    if data[..3] != MAGIC {
        return Err(bad("missing latent header".into()));
    }
    Ok(Latent {
        class: data[3],
        attributes: u32::from_le_bytes(data[4..8].try_into().expect("4 bytes")),
        noise_seed: u64::from_le_bytes(data[8..16].try_into().expect("8 bytes")),
    })
}
