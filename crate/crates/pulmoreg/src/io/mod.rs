//! File formats: MetaImage volumes and displacement fields, landmark CSVs.

mod landmarks;
mod metaimage;

pub use landmarks::{
    read_landmark_pairs, read_landmarks, write_correspondences_csv, write_landmarks, LandmarkList,
};
pub use metaimage::{
    read_displacement_field, read_metaimage, write_displacement_field, write_metaimage,
    ElementType,
};
