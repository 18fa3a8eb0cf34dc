use crate::bpe::TokenizerModel;
use crate::error::Result;
use crate::instruct::InstructRecord;
use crate::model::Example;

/// Token ids and per-token loss mask for one instruct record, laid out as
/// `[system, sep, prompt, sep, response, <eod>]` (system and its separator
/// omitted when absent). Each segment is encoded on its own so that segment
/// boundaries are token boundaries. Returns `None` when the sequence is
/// longer than `max_len`.
pub fn build_finetune_example(
    rec: &InstructRecord,
    tokenizer: &TokenizerModel,
    separator: &str,
    max_len: usize,
) -> Result<Option<(Vec<u32>, Vec<bool>)>> {
    let eod = tokenizer.eod_id()?;
    let sep = tokenizer.encode(separator);
    let mut tokens = Vec::new();
    if let Some(system) = &rec.system {
        tokens.extend(tokenizer.encode(system));
        tokens.extend(&sep);
    }
    tokens.extend(tokenizer.encode(&rec.prompt));
    tokens.extend(&sep);
    let prefix = tokens.len();
    tokens.extend(tokenizer.encode(&rec.response));
    tokens.push(eod);
    if tokens.len() > max_len {
        return Ok(None);
    }
    let mask = (0..tokens.len()).map(|i| i >= prefix).collect();
    Ok(Some((tokens, mask)))
}

/// Next-token example whose loss covers exactly the masked tokens.
pub fn finetune_example(tokens: &[u32], mask: &[bool]) -> Example {
    let mut ex = Example::from_window(tokens);
    ex.mask = Some(mask[1..].to_vec());
    ex
}

/// Builds examples for every record that fits in `seq_len` inputs; the
/// second value counts skipped records.
pub fn prepare_finetune(
    records: &[InstructRecord],
    tokenizer: &TokenizerModel,
    separator: &str,
    seq_len: usize,
) -> Result<(Vec<Example>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for rec in records {
        match build_finetune_example(rec, tokenizer, separator, seq_len + 1)? {
            Some((t, m)) => out.push(finetune_example(&t, &m)),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}
