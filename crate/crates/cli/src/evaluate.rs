use bridgekit::connectors::Connector;
use bridgekit::datapipe::UtteranceRecord;
use bridgekit::eval::{DecodeOutcome, EvalReport};
use bridgekit::numcore::par_map;
use bridgekit::ParamStore;

use crate::checkpoint::Checkpoint;
use crate::error::CliResult;
use crate::pipeline::Pipeline;

/// Greedy transcription of one record.
pub fn transcribe(p: &Pipeline, connector: &Connector, store: &ParamStore<f32>, record: &UtteranceRecord) -> bridgekit::Result<DecodeOutcome> {
    let x = p.features(record)?;
    let e = p.decoder.text_embeddings().cast::<f32>();
    let tokens = connector.encode(store, &x, Some(&e))?;
    let decoded = p
        .decoder
        .greedy_decode(p.decoder_store_f32(), Some(tokens.tensor()), p.config.eval.max_decode_len)?;
    let hypothesis = p.task.vocab().render(&decoded.tokens);
    DecodeOutcome::new(
        &record.id,
        &record.transcript,
        &hypothesis,
        record.duration_seconds,
        decoded.truncated,
    )
}

pub fn decode_all(p: &Pipeline, connector: &Connector, store: &ParamStore<f32>, records: &[UtteranceRecord]) -> CliResult<Vec<DecodeOutcome>> {
    Ok(par_map(records, |r| transcribe(p, connector, store, r))?)
}

/// Decodes `records` with a checkpoint's connector and pools the scores.
pub fn evaluate(p: &Pipeline, checkpoint: &Checkpoint, records: &[UtteranceRecord]) -> CliResult<EvalReport> {
    let connector = Connector::attach(&p.connector_config, &checkpoint.connector)?;
    let store: ParamStore<f32> = checkpoint.connector.cast();
    let outcomes = decode_all(p, &connector, &store, records)?;
    Ok(EvalReport::new(outcomes, &p.config.eval.buckets)?)
}
