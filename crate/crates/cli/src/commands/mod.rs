pub mod finetune;
pub mod preprocess;
pub mod pretrain;
pub mod report;
pub mod sample_noise;
pub mod verify;
