pub mod agent;
pub mod config;
pub mod datagen;
pub mod geometry;
pub mod kpam;
pub mod pointcloud;
pub mod scene;
pub mod trajectory;
