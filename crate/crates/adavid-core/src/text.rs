//! Fixed-width text encoder and the closed-world vocabulary.

use crate::adaptive::{
    adaptive_layernorm, adaptive_linear, l2_normalize, plain_layer_forward, BoundLayer,
    BoundLayerNorm, BoundLinear, LayerKind, LayerNormParams, LayerParams, LinearParams, MASK_NEG,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use std::collections::BTreeMap;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;

/// Token-to-id map with reserved pad/unk/cls ids. Ids are dense and
/// assigned in sorted token order, so the map is stable under
/// serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    map: BTreeMap<String, u32>,
}

impl Vocab {
    /// Build from a corpus: collect all normalized tokens, sort, assign
    /// ids starting after the reserved range.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = Vec::new();
        for t in texts {
            for w in split_words(t) {
                words.push(w);
            }
        }
        words.sort_unstable();
        words.dedup();
        let map = words
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w, CLS_ID + 1 + i as u32))
            .collect();
        Vocab { map }
    }

    pub fn size(&self) -> usize {
        self.map.len() + 3
    }

    pub fn id(&self, word: &str) -> u32 {
        self.map.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Sorted "token<TAB>id" lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, id) in &self.map {
            out.push_str(w);
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (w, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Checkpoint(format!("bad vocab line '{line}'")))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad vocab id '{id}'")))?;
            map.insert(w.to_string(), id);
        }
        Ok(Vocab { map })
    }
}

fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

/// One tokenized row: cls + words, truncated/padded to max_len.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRow {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenRow> {
    if max_len < 2 {
        return Err(Error::RejectedInput("max_len must be at least 2".into()));
    }
    let mut ids = vec![CLS_ID];
    for w in split_words(text) {
        if ids.len() == max_len {
            break;
        }
        ids.push(vocab.id(&w));
    }
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mask = (0..max_len).map(|i| i < real).collect();
    Ok(TokenRow { ids, mask })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextConfig {
    pub layers: usize,
    pub width: usize,
    pub head_dim: usize,
    pub max_len: usize,
    pub embed: usize,
}

impl TextConfig {
    /// 4 layers, width 64, 4 heads, 16 tokens.
    pub fn toy(embed: usize) -> Self {
        TextConfig {
            layers: 4,
            width: 64,
            head_dim: 16,
            max_len: 16,
            embed,
        }
    }

    pub fn tiny(embed: usize) -> Self {
        TextConfig {
            layers: 2,
            width: 16,
            head_dim: 8,
            max_len: 8,
            embed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoderParams {
    pub config: TextConfig,
    pub vocab_size: usize,
    pub embed_table: ParamId,
    pub pos_table: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_ln: LayerNormParams,
    pub head: LinearParams,
}

impl TextEncoderParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: &TextConfig,
        vocab_size: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = config.width;
        let embed_table = store.add_normal(&format!("{prefix}.embed"), vocab_size, w, 0.2, rng);
        let pos_table = store.add_normal(&format!("{prefix}.pos"), config.max_len, w, 0.2, rng);
        let layers = (0..config.layers)
            .map(|l| {
                LayerParams::init(
                    store,
                    &format!("{prefix}.l{l}"),
                    LayerKind::Plain,
                    w,
                    config.head_dim,
                    rng,
                )
            })
            .collect();
        let final_ln = LayerNormParams::init(store, &format!("{prefix}.final_ln"), w);
        let mut head = LinearParams::init(store, &format!("{prefix}.head"), config.embed, w, false, false, rng);
        head.nest_in = false;
        head.nest_out = false;
        TextEncoderParams {
            config: config.clone(),
            vocab_size,
            embed_table,
            pos_table,
            layers,
            final_ln,
            head,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, frozen: bool) -> BoundTextEncoder {
        let bind_id = |tape: &mut Tape, id: ParamId| {
            if frozen {
                tape.frozen_param(store, id)
            } else {
                tape.param(store, id)
            }
        };
        BoundTextEncoder {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            embed_table: bind_id(tape, self.embed_table),
            pos_table: bind_id(tape, self.pos_table),
            layers: self.layers.iter().map(|l| l.bind(tape, store, frozen)).collect(),
            final_ln: self.final_ln.bind(tape, store, frozen),
            head: self.head.bind(tape, store, frozen),
        }
    }
}

pub struct BoundTextEncoder {
    pub config: TextConfig,
    pub vocab_size: usize,
    pub embed_table: Var,
    pub pos_table: Var,
    pub layers: Vec<BoundLayer>,
    pub final_ln: BoundLayerNorm,
    pub head: BoundLinear,
}

/// Encode one tokenized row into a unit-norm embedding: embedding plus
/// learned positions, masked plain transformer layers at fixed width,
/// cls pooling, head, L2 normalize.
pub fn encode_text(tape: &mut Tape, enc: &BoundTextEncoder, row: &TokenRow) -> Result<Var> {
    let cfg = &enc.config;
    let w = cfg.width;
    if row.ids.len() != cfg.max_len {
        return Err(Error::RejectedInput(format!(
            "token row has {} entries, expected {}",
            row.ids.len(),
            cfg.max_len
        )));
    }
    if let Some(&bad) = row.ids.iter().find(|&&id| id as usize >= enc.vocab_size) {
        return Err(Error::RejectedInput(format!(
            "token id {bad} exceeds vocabulary size {}",
            enc.vocab_size
        )));
    }
    let idx: Vec<usize> = row.ids.iter().map(|&i| i as usize).collect();
    let tok = tape.gather_rows(enc.embed_table, &idx)?;
    let pos_idx: Vec<usize> = (0..cfg.max_len).collect();
    let pos = tape.gather_rows(enc.pos_table, &pos_idx)?;
    let mut x = tape.add(tok, pos)?;

    // Additive key mask shared by every query row.
    let mask_data: Vec<f64> = row.mask.iter().map(|&m| if m { 0.0 } else { MASK_NEG }).collect();
    let mask = tape.constant(1, cfg.max_len, mask_data);

    for layer in &enc.layers {
        x = plain_layer_forward(tape, layer, x, w, Some(mask))?;
    }
    let x = adaptive_layernorm(tape, &enc.final_ln, x, w)?;
    let cls = tape.gather_rows(x, &[0])?;
    let emb = adaptive_linear(tape, &enc.head, cls, cfg.embed, w)?;
    l2_normalize(tape, emb)
}

/// Encode on a throwaway tape and return the embedding values.
pub fn encode_text_value(
    store: &ParamStore,
    params: &TextEncoderParams,
    row: &TokenRow,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, store, true);
    let emb = encode_text(&mut tape, &bound, row)?;
    Ok(tape.value(emb).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_vocab() -> Vocab {
        // "drawer" < "open" < "the" alphabetically: ids 3, 4, 5.
        Vocab::build(["open the drawer"])
    }

    #[test]
    fn tokenize_hand_case() {
        let v = demo_vocab();
        assert_eq!(v.id("open"), 4);
        assert_eq!(v.id("the"), 5);
        assert_eq!(v.id("drawer"), 3);
        let row = tokenize("Open the Drawer", &v, 8).unwrap();
        assert_eq!(row.ids, vec![2, 4, 5, 3, 0, 0, 0, 0]);
        assert_eq!(
            row.mask,
            vec![true, true, true, true, false, false, false, false]
        );
    }

    #[test]
    fn tokenize_empty_and_unknown() {
        let v = demo_vocab();
        let row = tokenize("", &v, 4).unwrap();
        assert_eq!(row.ids, vec![2, 0, 0, 0]);
        assert_eq!(row.mask, vec![true, false, false, false]);

        let row = tokenize("open sesame", &v, 4).unwrap();
        assert_eq!(row.ids, vec![2, 4, 1, 0]);
    }

    #[test]
    fn tokenize_truncates() {
        let v = demo_vocab();
        let row = tokenize("open the drawer open the drawer", &v, 4).unwrap();
        assert_eq!(row.ids, vec![2, 4, 5, 3]);
        assert!(row.mask.iter().all(|&m| m));
    }

    #[test]
    fn vocab_roundtrip() {
        let v = Vocab::build(["red spark rises", "blue wave falls"]);
        let text = v.to_text();
        let v2 = Vocab::from_text(&text).unwrap();
        assert_eq!(v, v2);
    }

    fn setup(max_len: usize) -> (ParamStore, TextEncoderParams, Vocab) {
        let vocab = Vocab::build(["open the drawer", "wash the dish", "stack the blocks"]);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(42);
        let cfg = TextConfig {
            layers: 2,
            width: 16,
            head_dim: 8,
            max_len,
            embed: 8,
        };
        let params = TextEncoderParams::init(&mut store, "t", &cfg, vocab.size(), &mut rng);
        (store, params, vocab)
    }

    #[test]
    fn identical_strings_identical_embeddings() {
        let (store, params, vocab) = setup(8);
        let a = tokenize("open the drawer", &vocab, 8).unwrap();
        let b = tokenize("open the drawer", &vocab, 8).unwrap();
        let ea = encode_text_value(&store, &params, &a).unwrap();
        let eb = encode_text_value(&store, &params, &b).unwrap();
        assert_eq!(ea, eb);
        let cos = crate::tensor::cosine(&ea, &eb);
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_is_unit_norm() {
        let (store, params, vocab) = setup(8);
        let row = tokenize("wash the dish", &vocab, 8).unwrap();
        let e = encode_text_value(&store, &params, &row).unwrap();
        assert!((crate::tensor::l2_norm(&e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn padding_positions_have_zero_influence() {
        let (store, params, vocab) = setup(8);
        let row = tokenize("open the drawer", &vocab, 8).unwrap();
        let base = encode_text_value(&store, &params, &row).unwrap();
        // Perturb the ids at padded positions; the embedding cannot move.
        let mut tampered = row.clone();
        for i in 0..8 {
            if !tampered.mask[i] {
                tampered.ids[i] = 3;
            }
        }
        let e = encode_text_value(&store, &params, &tampered).unwrap();
        assert_eq!(base, e);
    }

    #[test]
    fn padding_length_invariance() {
        // Same string at max_len 8 vs 16, encoded by models sharing the
        // same parameters on the first 8 positions.
        let vocab = Vocab::build(["open the drawer"]);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(7);
        let cfg16 = TextConfig {
            layers: 2,
            width: 16,
            head_dim: 8,
            max_len: 16,
            embed: 8,
        };
        let params16 = TextEncoderParams::init(&mut store, "t", &cfg16, vocab.size(), &mut rng);
        let mut params8 = params16.clone();
        params8.config.max_len = 8;

        let row16 = tokenize("open the drawer", &vocab, 16).unwrap();
        let row8 = tokenize("open the drawer", &vocab, 8).unwrap();
        // params8 gathers only the first 8 positional rows.
        let e16 = encode_text_value(&store, &params16, &row16).unwrap();
        let e8 = encode_text_value(&store, &params8, &row8).unwrap();
        for (a, b) in e16.iter().zip(&e8) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn id_overflow_rejected() {
        let (store, params, _) = setup(8);
        let row = TokenRow {
            ids: vec![2, 9999, 0, 0, 0, 0, 0, 0],
            mask: vec![true, true, false, false, false, false, false, false],
        };
        assert!(matches!(
            encode_text_value(&store, &params, &row),
            Err(Error::RejectedInput(_))
        ));
    }
}
