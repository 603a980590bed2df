//! Fixed index map of the 152-entry logit vector.

/// Length of the full logit vector.
pub const NUM_LOGITS: usize = 152;
/// Length of the minimal analysis subset.
pub const NUM_MINIMAL: usize = 130;
/// Number of FDN delay lines.
pub const FDN_LINES: usize = 6;
/// Number of sampled points of the FDN attenuation response.
pub const GAMMA_POINTS: usize = 49;

pub const PK1_FREQ: usize = 0;
pub const PK1_Q: usize = 1;
pub const PK1_GAIN: usize = 2;
pub const PK2_FREQ: usize = 3;
pub const PK2_Q: usize = 4;
pub const PK2_GAIN: usize = 5;
pub const LS_FREQ: usize = 6;
pub const LS_GAIN: usize = 7;
pub const HS_FREQ: usize = 8;
pub const HS_GAIN: usize = 9;
pub const LP_FREQ: usize = 10;
pub const LP_Q: usize = 11;
pub const HP_FREQ: usize = 12;
pub const HP_Q: usize = 13;

pub const COMP_THRESHOLD: usize = 14;
pub const EXP_THRESHOLD: usize = 15;
pub const COMP_RATIO: usize = 16;
pub const EXP_RATIO: usize = 17;
pub const ATTACK: usize = 18;
pub const RELEASE: usize = 19;
pub const RMS_SMOOTHING: usize = 20;
pub const MAKEUP: usize = 21;
pub const LOOKAHEAD: usize = 22;

pub const DELAY_TIME: usize = 23;
pub const DELAY_FEEDBACK: usize = 24;
pub const DELAY_GAIN: usize = 25;
pub const DELAY_LP_FREQ: usize = 26;
pub const DELAY_LP_Q: usize = 27;
pub const DELAY_PAN_ODD: usize = 28;
pub const DELAY_PAN_EVEN: usize = 29;
pub const DELAY_LOG_ETA: usize = 30;

/// `B` (6 x 2), row-major.
pub const FDN_B: usize = 31;
/// `C` (2 x 6), row-major.
pub const FDN_C: usize = 43;
/// Logits of the orthogonal feedback matrix (6 x 6), row-major; only the strictly upper
/// triangle is used.
pub const FDN_U: usize = 55;
pub const FDN_GAMMA: usize = 91;
pub const TONE_PK1_FREQ: usize = 140;
pub const TONE_PK1_Q: usize = 141;
pub const TONE_PK1_GAIN: usize = 142;
pub const TONE_PK2_FREQ: usize = 143;
pub const TONE_PK2_Q: usize = 144;
pub const TONE_PK2_GAIN: usize = 145;
pub const TONE_LS_FREQ: usize = 146;
pub const TONE_LS_GAIN: usize = 147;
pub const TONE_HS_FREQ: usize = 148;
pub const TONE_HS_GAIN: usize = 149;

pub const PAN: usize = 150;
pub const SEND: usize = 151;

/// Top-level effect blocks in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Peq,
    Dynamics,
    Delay,
    Fdn,
    Panner,
    Send,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::Peq,
        Block::Dynamics,
        Block::Delay,
        Block::Fdn,
        Block::Panner,
        Block::Send,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            Block::Peq => 0..14,
            Block::Dynamics => 14..23,
            Block::Delay => 23..31,
            Block::Fdn => 31..150,
            Block::Panner => 150..151,
            Block::Send => 151..152,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Peq => "peq",
            Block::Dynamics => "dynamics",
            Block::Delay => "delay",
            Block::Fdn => "fdn",
            Block::Panner => "pan",
            Block::Send => "send",
        }
    }
}

/// Block owning logit `i`.
pub fn block_of(i: usize) -> Block {
    *Block::ALL
        .iter()
        .find(|b| b.range().contains(&i))
        .unwrap_or_else(|| panic!("logit index {i} out of range"))
}

/// Whether a feedback-matrix logit sits on or below the diagonal (never used by the decoder).
pub fn is_dead_u_logit(i: usize) -> bool {
    if !(FDN_U..FDN_U + 36).contains(&i) {
        return false;
    }
    let k = i - FDN_U;
    k % FDN_LINES <= k / FDN_LINES
}

/// Whether logit `i` belongs to the minimal analysis subset.
pub fn is_minimal(i: usize) -> bool {
    i != DELAY_LOG_ETA && !is_dead_u_logit(i)
}

/// Full-vector indices of the minimal subset, in export order.
pub fn minimal_indices() -> Vec<usize> {
    (0..NUM_LOGITS).filter(|&i| is_minimal(i)).collect()
}

/// `(total, minimal)` parameter counts of the layout.
pub fn count_parameters() -> (usize, usize) {
    (NUM_LOGITS, minimal_indices().len())
}

const SCALAR_NAMES: [(usize, &str); 41] = [
    (PK1_FREQ, "peq.pk1.freq"),
    (PK1_Q, "peq.pk1.q"),
    (PK1_GAIN, "peq.pk1.gain"),
    (PK2_FREQ, "peq.pk2.freq"),
    (PK2_Q, "peq.pk2.q"),
    (PK2_GAIN, "peq.pk2.gain"),
    (LS_FREQ, "peq.ls.freq"),
    (LS_GAIN, "peq.ls.gain"),
    (HS_FREQ, "peq.hs.freq"),
    (HS_GAIN, "peq.hs.gain"),
    (LP_FREQ, "peq.lp.freq"),
    (LP_Q, "peq.lp.q"),
    (HP_FREQ, "peq.hp.freq"),
    (HP_Q, "peq.hp.q"),
    (COMP_THRESHOLD, "dynamics.comp_threshold"),
    (EXP_THRESHOLD, "dynamics.exp_threshold"),
    (COMP_RATIO, "dynamics.comp_ratio"),
    (EXP_RATIO, "dynamics.exp_ratio"),
    (ATTACK, "dynamics.attack"),
    (RELEASE, "dynamics.release"),
    (RMS_SMOOTHING, "dynamics.rms_smoothing"),
    (MAKEUP, "dynamics.makeup"),
    (LOOKAHEAD, "dynamics.lookahead"),
    (DELAY_TIME, "delay.time"),
    (DELAY_FEEDBACK, "delay.feedback"),
    (DELAY_GAIN, "delay.gain"),
    (DELAY_LP_FREQ, "delay.lp.freq"),
    (DELAY_LP_Q, "delay.lp.q"),
    (DELAY_PAN_ODD, "delay.pan_odd"),
    (DELAY_PAN_EVEN, "delay.pan_even"),
    (DELAY_LOG_ETA, "delay.log_eta"),
    (TONE_PK1_FREQ, "fdn.tone.pk1.freq"),
    (TONE_PK1_Q, "fdn.tone.pk1.q"),
    (TONE_PK1_GAIN, "fdn.tone.pk1.gain"),
    (TONE_PK2_FREQ, "fdn.tone.pk2.freq"),
    (TONE_PK2_Q, "fdn.tone.pk2.q"),
    (TONE_PK2_GAIN, "fdn.tone.pk2.gain"),
    (TONE_LS_FREQ, "fdn.tone.ls.freq"),
    (TONE_LS_GAIN, "fdn.tone.ls.gain"),
    (TONE_HS_FREQ, "fdn.tone.hs.freq"),
    (TONE_HS_GAIN, "fdn.tone.hs.gain"),
];

/// Human-readable name of logit `i`, e.g. `fdn.u[0][3]` or `delay.time`.
pub fn parameter_name(i: usize) -> String {
    if let Some((_, n)) = SCALAR_NAMES.iter().find(|(j, _)| *j == i) {
        return (*n).to_string();
    }
    match i {
        PAN => "pan".into(),
        SEND => "send".into(),
        i if (FDN_B..FDN_C).contains(&i) => {
            let k = i - FDN_B;
            format!("fdn.b[{}][{}]", k / 2, k % 2)
        }
        i if (FDN_C..FDN_U).contains(&i) => {
            let k = i - FDN_C;
            format!("fdn.c[{}][{}]", k / FDN_LINES, k % FDN_LINES)
        }
        i if (FDN_U..FDN_GAMMA).contains(&i) => {
            let k = i - FDN_U;
            format!("fdn.u[{}][{}]", k / FDN_LINES, k % FDN_LINES)
        }
        i if (FDN_GAMMA..TONE_PK1_FREQ).contains(&i) => format!("fdn.gamma[{}]", i - FDN_GAMMA),
        _ => panic!("logit index {i} out of range"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn layout_counts_are_locked() {
        assert_eq!(count_parameters(), (152, 130));
        let sizes: Vec<usize> = Block::ALL.iter().map(|b| b.range().len()).collect();
        assert_eq!(sizes, vec![14, 9, 8, 119, 1, 1]);
        assert_eq!(Block::Fdn.range().len(), 119);
    }

    #[test]
    fn every_index_has_one_unique_name() {
        let names: HashSet<String> = (0..NUM_LOGITS).map(parameter_name).collect();
        assert_eq!(names.len(), NUM_LOGITS);
        for b in Block::ALL {
            for i in b.range() {
                assert_eq!(block_of(i), b);
                assert!(parameter_name(i).starts_with(b.name()));
            }
        }
    }

    #[test]
    fn excluded_entries_are_eta_and_lower_u() {
        let excluded: Vec<usize> = (0..NUM_LOGITS).filter(|&i| !is_minimal(i)).collect();
        assert_eq!(excluded.len(), 22);
        assert!(excluded.contains(&DELAY_LOG_ETA));
        assert!(is_dead_u_logit(FDN_U)); // (0,0)
        assert!(!is_dead_u_logit(FDN_U + 1)); // (0,1)
        assert!(is_dead_u_logit(FDN_U + 6)); // (1,0)
    }
}
