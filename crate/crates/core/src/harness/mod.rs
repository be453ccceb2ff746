//! Synthetic worlds and end-to-end evaluation.

mod eval;
mod world;

pub use eval::{
    annotate_reports, dictionary_from_reports, label_nodes, reinforce_pairs, run_eval, run_eval_in_process,
    score_dictionary, EvalBackend, EvalConfig, EvalReport, IdentityScores, InProcessBackend, QuestionRecord,
};
pub use world::{
    generate_world, perturb, read_clips, write_clips, Fact, Identity, QaPair, SyntheticWorld, WorldConfig, CLIPS_FILE,
    WORLD_FILE, WORLD_FORMAT_VERSION,
};
