use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::rng::mix_seed;

pub const IMAGE_SIZE: usize = 16;
pub const CHANNELS: usize = 3;
pub const NUM_SHAPES: usize = 4;
pub const NUM_COLORS: usize = 4;
pub const NUM_POSITIONS: usize = 4;
/// shape × color × position
pub const NUM_CLASSES: usize = NUM_SHAPES * NUM_COLORS * NUM_POSITIONS;

macro_rules! label_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: [$name; 4] = [$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::format("label", format!("unknown {} `{other}`", stringify!($name)))),
                }
            }
        }
    };
}

label_enum!(ShapeClass { Circle => "circle", Square => "square", Triangle => "triangle", Cross => "cross" });
label_enum!(ColorClass { Red => "red", Green => "green", Blue => "blue", Yellow => "yellow" });
label_enum!(PositionBin {
    TopLeft => "top_left",
    TopRight => "top_right",
    BottomLeft => "bottom_left",
    BottomRight => "bottom_right",
});

impl ColorClass {
    pub fn rgb(self) -> [f32; 3] {
        match self {
            ColorClass::Red => [0.95, 0.15, 0.1],
            ColorClass::Green => [0.1, 0.85, 0.2],
            ColorClass::Blue => [0.15, 0.3, 0.95],
            ColorClass::Yellow => [0.95, 0.85, 0.1],
        }
    }
}

impl PositionBin {
    /// Top-left pixel of the bin's quadrant.
    pub fn origin(self) -> (usize, usize) {
        let half = IMAGE_SIZE / 2;
        match self {
            PositionBin::TopLeft => (0, 0),
            PositionBin::TopRight => (half, 0),
            PositionBin::BottomLeft => (0, half),
            PositionBin::BottomRight => (half, half),
        }
    }
}

/// Joint (shape, color, position) label packed as `shape + 4·color + 16·position`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub usize);

impl ClassId {
    pub fn new(shape: ShapeClass, color: ColorClass, position: PositionBin) -> Self {
        ClassId(shape.index() + NUM_SHAPES * color.index() + NUM_SHAPES * NUM_COLORS * position.index())
    }

    pub fn parts(self) -> Result<(ShapeClass, ColorClass, PositionBin)> {
        if self.0 >= NUM_CLASSES {
            return Err(Error::invalid(format!("class id {} out of range", self.0)));
        }
        Ok((
            ShapeClass::from_index(self.0 % NUM_SHAPES).unwrap(),
            ColorClass::from_index((self.0 / NUM_SHAPES) % NUM_COLORS).unwrap(),
            PositionBin::from_index(self.0 / (NUM_SHAPES * NUM_COLORS)).unwrap(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSample {
    pub image: Image,
    pub shape: ShapeClass,
    pub color: ColorClass,
    pub position: PositionBin,
}

impl ShapeSample {
    pub fn class_id(&self) -> ClassId {
        ClassId::new(self.shape, self.color, self.position)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00,
            Split::Val => 0x7661_6c00,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ShapeSample>,
    pub seed: u64,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> Vec<&Image> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.samples.iter().map(ShapeSample::class_id).collect()
    }
}

/// Generates `n` labeled shape images; a pure function of `(n, seed, split)`.
///
/// Labels are stratified: sample `i` has shape `i mod 4`, and each run of four
/// consecutive samples shares a (color, position) combination taken from a
/// seeded permutation of the 16 combinations, redrawn every 64 samples.
/// Geometry jitter (offset, size, brightness) comes from a split-specific
/// stream, so train and val images differ even for equal seeds.
pub fn gen_shapes(n: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be ≥ 1"));
    }
    let mut label_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, split.tag() ^ 0x6c61_6265_6c73));
    let mut geom_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, split.tag()));
    let mut combos: Vec<usize> = (0..NUM_COLORS * NUM_POSITIONS).collect();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if i % NUM_CLASSES == 0 {
            combos.shuffle(&mut label_rng);
        }
        let combo = combos[(i / NUM_SHAPES) % combos.len()];
        let shape = ShapeClass::from_index(i % NUM_SHAPES).unwrap();
        let color = ColorClass::from_index(combo % NUM_COLORS).unwrap();
        let position = PositionBin::from_index(combo / NUM_COLORS).unwrap();
        let image = render(shape, color, position, &mut geom_rng);
        samples.push(ShapeSample { image, shape, color, position });
    }
    Ok(Dataset { samples, seed, split })
}

const SUPERSAMPLE: usize = 4;

/// Anti-aliased rendering of one shape on a black background.
pub fn render<R: Rng + ?Sized>(shape: ShapeClass, color: ColorClass, position: PositionBin, rng: &mut R) -> Image {
    let (ox, oy) = position.origin();
    let half = (IMAGE_SIZE / 2) as f32;
    let cx = ox as f32 + half / 2.0 + rng.gen_range(-0.6..0.6);
    let cy = oy as f32 + half / 2.0 + rng.gen_range(-0.6..0.6);
    let r: f32 = rng.gen_range(2.3..3.1);
    let brightness: f32 = rng.gen_range(0.8..1.0);
    let rgb = color.rgb();
    let mut img = Image::zeros(IMAGE_SIZE, IMAGE_SIZE);
    let step = 1.0 / SUPERSAMPLE as f32;
    for py in 0..IMAGE_SIZE {
        for px in 0..IMAGE_SIZE {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f32 + (sx as f32 + 0.5) * step;
                    let y = py as f32 + (sy as f32 + 0.5) * step;
                    if inside(shape, x - cx, y - cy, r) {
                        hits += 1;
                    }
                }
            }
            let cover = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            for (c, &base) in rgb.iter().enumerate() {
                img.set(py, px, c, cover * base * brightness);
            }
        }
    }
    img
}

fn inside(shape: ShapeClass, dx: f32, dy: f32, r: f32) -> bool {
    match shape {
        ShapeClass::Circle => dx * dx + dy * dy <= r * r,
        ShapeClass::Square => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        ShapeClass::Triangle => dy >= -r && dy <= 0.8 * r && dx.abs() <= (dy + r) / 1.8,
        ShapeClass::Cross => {
            let arm = 0.35 * r;
            (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
        }
    }
}
