//! Dataset construction, persistence, experiment runners and plotting.

pub mod config;
pub mod dataset;
pub mod experiments;
pub mod optimize;
pub mod plot;

pub use config::{
    AugmentConfig, DatasetConfig, DiffusionConfig, EvalConfig, OptimizeConfig, PipelineConfig, Preset, Range,
    RvqTrainConfig,
};
pub use dataset::{
    augment, build_dataset, candidates, read_dataset, read_manifest, round_trip_chamfer, split_of, validate_dataset,
    write_dataset, Candidate, Dataset, DatasetRecord, Manifest, RecordCounts, SourceTag, Split, ValidationReport,
    FORMAT_VERSION, MANIFEST_FILE,
};
pub use experiments::{
    accuracy_csv, ae_samples, decode_embeddings, embed, generate, load_rvq, neighborhood_rows, reconstruction_report,
    run_conditional_eval, save_rvq, scatter_csv, train_autoencoder, train_diffusion, train_rvq, ClassAccuracy,
    ConditionalReport, EpochLog, Generated, ReconReport, ScatterPoint,
};
pub use optimize::{
    compare_inits, init_registry, optimize_to_target, GeneratedInit, InitContext, InitFactory, InitStrategy,
    InitSummary, OptimizationResult, RandomInit,
};
pub use plot::{plot_svg, render_svg, Figure, PlotKind, Series};
