//! Scripted backend for tests that need exact model replies.

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{Gateway, GatewayError, GatewaySettings, GenerationBackend, GenerationRequest, ModelDescriptor, ScaleTag};
use crate::clock::FixedClock;
use crate::stage::{Endpoint, Stage};

/// Replays queued replies in order; fails with a model error once drained.
#[derive(Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<Result<String, GatewayError>>>,
    requests: Mutex<Vec<GenerationRequest>>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<Result<String, GatewayError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl GenerationBackend for ScriptedBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        self.requests.lock().unwrap().push(request.clone());
        self.replies.lock().unwrap().pop_front().unwrap_or_else(|| {
            Err(GatewayError::Model {
                model: request.model_id.clone(),
                message: "script exhausted".into(),
            })
        })
    }
}

pub fn scripted_model() -> ModelDescriptor {
    ModelDescriptor {
        model_id: "scripted".to_string(),
        scale_tag: ScaleTag::Small,
        endpoint: Endpoint::Mock,
        capabilities: Stage::ALL.into_iter().collect::<BTreeSet<_>>(),
    }
}

/// Gateway over one small scripted model, zero backoff and a frozen clock.
pub fn scripted_gateway(replies: Vec<Result<String, GatewayError>>) -> (Gateway, ModelDescriptor) {
    let model = scripted_model();
    let settings = GatewaySettings {
        max_retries: 2,
        retry_backoff: Duration::ZERO,
        max_in_flight: 4,
    };
    let gw = Gateway::new(vec![model.clone()], settings, Arc::new(FixedClock::epoch()))
        .with_backend(&model.model_id, Arc::new(ScriptedBackend::new(replies)));
    (gw, model)
}
