pub mod panel;
pub mod edit;
pub mod palette;
pub mod keypoints;
pub mod encoder;
pub mod render;
pub mod llm;
pub mod pipeline;
