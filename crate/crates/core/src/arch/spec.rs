use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::nn::Activation;

/// Hyperparameters of a memory-block network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Memory blocks per repeat; block `m` of a repeat has dilation `2^m`.
    pub m: usize,
    pub r: usize,
    pub k1: usize,
    pub k2: usize,
    pub h: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub act_hidden: Activation,
    pub act_out: Activation,
    pub l_l: usize,
    pub l_r: usize,
    /// Add the input to the output and start the head at zero, so the initial model is the identity.
    pub passthrough: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            m: 4,
            r: 1,
            k1: 8,
            k2: 0,
            h: 16,
            c_in: 1,
            c_out: 1,
            act_hidden: Activation::Tanh,
            act_out: Activation::Tanh,
            l_l: 0,
            l_r: 0,
            passthrough: false,
        }
    }
}

const KEYS: &[&str] = &[
    "M", "R", "K1", "K2", "H", "C_in", "C_out", "act_hidden", "act_out", "L_l", "L_r", "passthrough",
];

impl ModelSpec {
    pub fn cochlear() -> Self {
        Self { m: 6, r: 2, k1: 80, k2: 0, h: 256, c_in: 1, c_out: 201, l_l: 256, l_r: 256, ..Self::default() }
    }

    pub fn ihc() -> Self {
        Self {
            m: 4,
            r: 2,
            k1: 32,
            k2: 32,
            h: 128,
            act_out: Activation::Sigmoid,
            l_l: 256,
            l_r: 256,
            ..Self::default()
        }
    }

    /// Three-branch nerve model: the first repeat is the shared trunk, the second the per-fibre branches.
    pub fn anf() -> Self {
        Self {
            m: 8,
            r: 2,
            k1: 16,
            k2: 16,
            h: 32,
            act_hidden: Activation::Relu,
            act_out: Activation::Relu,
            l_l: 7936,
            l_r: 256,
            ..Self::default()
        }
    }

    pub fn hearing_aid() -> Self {
        Self { m: 6, r: 2, k1: 32, k2: 32, h: 256, l_l: 7936, l_r: 256, passthrough: true, ..Self::default() }
    }

    pub fn blocks(&self) -> usize {
        self.m * self.r
    }

    pub fn dilation(&self, block: usize) -> usize {
        1 << (block % self.m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [("M", self.m), ("R", self.r), ("K1", self.k1), ("H", self.h), ("C_in", self.c_in), ("C_out", self.c_out)] {
            if v == 0 {
                bad.push(format!("{name} must be >= 1"));
            }
        }
        if self.m > 24 {
            bad.push("M must be <= 24".to_string());
        }
        if self.passthrough && self.c_in != self.c_out {
            bad.push(format!("passthrough needs C_in == C_out (got {} and {})", self.c_in, self.c_out));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(bad.join("; ")))
        }
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(section, "M", self.m);
        doc.set(section, "R", self.r);
        doc.set(section, "K1", self.k1);
        doc.set(section, "K2", self.k2);
        doc.set(section, "H", self.h);
        doc.set(section, "C_in", self.c_in);
        doc.set(section, "C_out", self.c_out);
        doc.set(section, "act_hidden", self.act_hidden);
        doc.set(section, "act_out", self.act_out);
        doc.set(section, "L_l", self.l_l);
        doc.set(section, "L_r", self.l_r);
        doc.set(section, "passthrough", self.passthrough);
    }

    /// Read from `section`; `extra` lists other keys tolerated there.
    pub fn read_kv(doc: &KvDoc, section: &str, extra: &[&str]) -> Result<Self> {
        let allowed: Vec<&str> = KEYS.iter().chain(extra).copied().collect();
        doc.reject_unknown(section, &allowed)?;
        let d = Self::default();
        let spec = Self {
            m: doc.parsed_or(section, "M", d.m)?,
            r: doc.parsed_or(section, "R", d.r)?,
            k1: doc.parsed_or(section, "K1", d.k1)?,
            k2: doc.parsed_or(section, "K2", d.k2)?,
            h: doc.parsed_or(section, "H", d.h)?,
            c_in: doc.parsed_or(section, "C_in", d.c_in)?,
            c_out: doc.parsed_or(section, "C_out", d.c_out)?,
            act_hidden: doc.parsed_or(section, "act_hidden", d.act_hidden)?,
            act_out: doc.parsed_or(section, "act_out", d.act_out)?,
            l_l: doc.parsed_or(section, "L_l", d.l_l)?,
            l_r: doc.parsed_or(section, "L_r", d.l_r)?,
            passthrough: doc.parsed_or(section, "passthrough", d.passthrough)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut doc = KvDoc::default();
        self.write_kv(&mut doc, "");
        doc.to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_kv(&KvDoc::parse(text)?, "", &[])
    }
}

/// Input span that influences one output sample.
///
/// Each block reaches `(K1 - 1) d` samples back and `K2 d` samples ahead, and
/// the spans of stacked blocks add.
pub fn receptive_field_closed_form(spec: &ModelSpec) -> usize {
    1 + (0..spec.blocks()).map(|b| (spec.k1 - 1 + spec.k2) * spec.dilation(b)).sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let s = |m, r, k1, k2| ModelSpec { m, r, k1, k2, ..ModelSpec::default() };
        assert_eq!(receptive_field_closed_form(&s(1, 1, 1, 0)), 1);
        assert_eq!(receptive_field_closed_form(&s(2, 1, 3, 0)), 7);
        assert_eq!(receptive_field_closed_form(&s(1, 1, 2, 0)), 2);
        assert_eq!(receptive_field_closed_form(&ModelSpec::cochlear()), 1 + 2 * 79 * 63);
    }

    #[test]
    fn dilations_cycle_per_repeat() {
        let s = ModelSpec::cochlear();
        let d: Vec<usize> = (0..s.blocks()).map(|b| s.dilation(b)).collect();
        assert_eq!(d, vec![1, 2, 4, 8, 16, 32, 1, 2, 4, 8, 16, 32]);
    }

    #[test]
    fn text_round_trip() {
        for s in [ModelSpec::cochlear(), ModelSpec::ihc(), ModelSpec::anf(), ModelSpec::hearing_aid()] {
            assert_eq!(ModelSpec::parse(&s.to_text()).unwrap(), s);
        }
        assert!(ModelSpec::parse("M = 2\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation_lists_violations() {
        let s = ModelSpec { m: 0, h: 0, ..ModelSpec::default() };
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("M must be >= 1") && msg.contains("H must be >= 1"));
    }
}
