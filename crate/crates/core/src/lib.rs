pub mod backend;
pub mod bodygeom;
pub mod conditioning;
pub mod dataio;
pub mod evaluation;
pub mod fixture;
pub mod raster;
pub mod synthesis;
