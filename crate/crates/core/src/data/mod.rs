//! Datasets: synthetic generators, long-format CSV ingestion, normalization
//! and Fourier-feature encoding of image coordinates.

mod csvio;
mod fourier;
mod image;
mod preprocess;
mod quadratic;

pub use csvio::{load_long_csv, read_long_csv, write_long_csv};
pub use fourier::FourierEncoder;
pub use image::{gen_image_dataset, read_pgm, read_raster_csv, ImageFrame, Raster};
pub use preprocess::{preprocess, Dataset, PreprocessMode, Preprocessing};
pub use quadratic::{gen_quadratic, QuadraticCoefficients, QuadraticLaw};
