#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use layie_core::backend::{BackendKind, BackendSpec, CompletionService, OracleBackend, OracleNoise, PricingTable};
use layie_core::corpus::Schema;
use layie_core::refine::SynonymTable;
use layie_core::sweep::{CompletionStore, Dataset, ModelServices, Runner, RunnerOptions};
use layie_core::synthetic::generate_split;

pub const MODEL: &str = "oracle";

pub fn dataset(n_test: usize, n_train: usize, seed: u64) -> Arc<Dataset> {
    let split = generate_split(n_test, n_train, seed, 0);
    Arc::new(
        Dataset::new(split.test, split.training, Schema::vrdu_registration(), SynonymTable::vrdu_default())
            .expect("synthetic dataset is valid"),
    )
}

pub fn oracle_service(data: &Dataset, model: &str, noise: OracleNoise, cache: Option<PathBuf>) -> Arc<CompletionService> {
    let spec = BackendSpec::oracle(model, noise);
    let oracle = OracleBackend::new(&spec, data.all_documents(), data.schema.clone(), data.synonyms.clone())
        .expect("valid oracle");
    Arc::new(CompletionService::new(spec, Some(Box::new(oracle)), cache).expect("valid service"))
}

pub fn replay_service(noise: OracleNoise, model: &str, cache: PathBuf) -> Arc<CompletionService> {
    let spec = BackendSpec {
        kind: BackendKind::Replay,
        replay_source: BackendKind::Oracle,
        ..BackendSpec::oracle(model, noise)
    };
    Arc::new(CompletionService::new(spec, None, Some(cache)).expect("valid replay service"))
}

pub fn runner_with(data: Arc<Dataset>, service: Arc<CompletionService>, store: CompletionStore) -> Runner {
    let services = ModelServices(HashMap::from([(service.spec().model_name.clone(), service)]));
    Runner::new(data, Arc::new(services), store, PricingTable::reference(), RunnerOptions::default())
        .expect("runner starts")
}

pub fn oracle_runner(data: Arc<Dataset>, noise: OracleNoise) -> Runner {
    let service = oracle_service(&data, MODEL, noise, None);
    runner_with(data, service, CompletionStore::in_memory())
}
