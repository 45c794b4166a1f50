//! Text formats: genotype datasets, phased haplotypes, founder reports and
//! flat `key = value` configuration files.
//!
//! A dataset file starts with `#loci <T>`, optionally followed by
//! `#alleles <A>` for alphabets other than {0, 1}. Each further line is
//! `<id> <population> <g_1> ... <g_T>`. Biallelic sites are written `0`, `1`
//! or `2` (copies of allele 1); other alphabets use `a/b`; `?` is missing.
//! Individuals of one population are written together, populations in
//! order of first appearance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{
    canonicalize_genotype, Allele, AlleleAlphabet, Dataset, Genotype, GenotypeSite, Haplotype, Individual, Population,
};
use crate::summary::PhasingResult;
use crate::synth::GroundTruth;

/// Largest alphabet the text formats can hold; haplotypes are digit strings.
pub const MAX_FILE_ALPHABET: usize = 10;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_site(tok: &str, alphabet: AlleleAlphabet, line: usize) -> Result<GenotypeSite> {
    if tok == "?" {
        return Ok(GenotypeSite::Missing);
    }
    if let Some((a, b)) = tok.split_once('/') {
        let allele = |s: &str| {
            s.parse::<Allele>()
                .map_err(|_| parse_err(line, format!("bad allele {s:?} in {tok:?}")))
        };
        return canonicalize_genotype(alphabet, allele(a)?, allele(b)?).map_err(|e| parse_err(line, e.to_string()));
    }
    if alphabet != AlleleAlphabet::BIALLELIC {
        return Err(parse_err(line, format!("expected an a/b pair, got {tok:?}")));
    }
    match tok {
        "0" => Ok(GenotypeSite::Pair(0, 0)),
        "1" => Ok(GenotypeSite::Pair(0, 1)),
        "2" => Ok(GenotypeSite::Pair(1, 1)),
        _ => Err(parse_err(line, format!("bad genotype {tok:?}, expected 0, 1, 2 or ?"))),
    }
}

fn header_value(line: &str, key: &str, lineno: usize) -> Result<Option<usize>> {
    let Some(rest) = line.strip_prefix('#') else {
        return Ok(None);
    };
    let mut it = rest.split_whitespace();
    if it.next() != Some(key) {
        return Ok(None);
    }
    let v = it
        .next()
        .ok_or_else(|| parse_err(lineno, format!("#{key} needs a value")))?;
    if it.next().is_some() {
        return Err(parse_err(lineno, format!("trailing text after #{key}")));
    }
    v.parse()
        .map(Some)
        .map_err(|_| parse_err(lineno, format!("bad #{key} value {v:?}")))
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (first_no, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let n_loci =
        header_value(first, "loci", first_no)?.ok_or_else(|| parse_err(first_no, "expected a #loci header"))?;
    let mut alphabet = AlleleAlphabet::BIALLELIC;
    let mut populations: Vec<Population> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut body = false;
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if !body {
            if let Some(a) = header_value(line, "alleles", no)? {
                if !(2..=MAX_FILE_ALPHABET).contains(&a) {
                    return Err(parse_err(no, format!("alphabet size must be in 2..={MAX_FILE_ALPHABET}, got {a}")));
                }
                alphabet = AlleleAlphabet::new(a as u8)?;
                continue;
            }
        }
        body = true;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != n_loci + 2 {
            return Err(parse_err(
                no,
                format!("expected id, population and {n_loci} genotypes, found {} fields", toks.len()),
            ));
        }
        let sites = toks[2..]
            .iter()
            .map(|t| parse_site(t, alphabet, no))
            .collect::<Result<Vec<_>>>()?;
        let j = *index.entry(toks[1].to_string()).or_insert_with(|| {
            populations.push(Population {
                name: toks[1].to_string(),
                individuals: Vec::new(),
            });
            populations.len() - 1
        });
        populations[j].individuals.push(Individual {
            id: toks[0].to_string(),
            genotype: Genotype(sites),
        });
    }
    Ok(Dataset {
        alphabet,
        n_loci,
        populations,
    })
}

fn site_token(site: GenotypeSite, biallelic: bool) -> String {
    match site {
        GenotypeSite::Missing => "?".into(),
        GenotypeSite::Pair(a, b) if biallelic => (a + b).to_string(),
        GenotypeSite::Pair(a, b) => format!("{a}/{b}"),
    }
}

pub fn write_dataset(data: &Dataset) -> String {
    let mut out = format!("#loci {}\n", data.n_loci);
    let biallelic = data.alphabet == AlleleAlphabet::BIALLELIC;
    if !biallelic {
        writeln!(out, "#alleles {}", data.alphabet.size()).unwrap();
    }
    for p in &data.populations {
        for ind in &p.individuals {
            write!(out, "{} {}", ind.id, p.name).unwrap();
            for &s in ind.genotype.sites() {
                out.push(' ');
                out.push_str(&site_token(s, biallelic));
            }
            out.push('\n');
        }
    }
    out
}

/// One individual's phased pair as read from a haplotype file.
#[derive(Clone, Debug, PartialEq)]
pub struct HaplotypeRecord {
    pub id: String,
    pub population: String,
    pub haplotypes: [Haplotype; 2],
}

/// Two lines per individual: `<id> <population> <e> <alleles>`, e = 0, 1.
pub fn write_haplotypes(records: &[HaplotypeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        for (e, h) in r.haplotypes.iter().enumerate() {
            writeln!(out, "{} {} {} {}", r.id, r.population, e, h).unwrap();
        }
    }
    out
}

pub fn parse_haplotypes(text: &str) -> Result<Vec<HaplotypeRecord>> {
    let mut out: Vec<HaplotypeRecord> = Vec::new();
    let mut pending: Option<(usize, String, String, Haplotype)> = None;
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(no, format!("expected 4 fields, found {}", toks.len())));
        }
        let h = Haplotype::from_digits(toks[3]).map_err(|e| parse_err(no, e.to_string()))?;
        match (pending.take(), toks[2]) {
            (None, "0") => pending = Some((no, toks[0].to_string(), toks[1].to_string(), h)),
            (Some((_, id, pop, h0)), "1") if id == toks[0] && pop == toks[1] => {
                if h0.len() != h.len() {
                    return Err(parse_err(no, "the two haplotypes differ in length"));
                }
                out.push(HaplotypeRecord {
                    id,
                    population: pop,
                    haplotypes: [h0, h],
                });
            }
            _ => return Err(parse_err(no, "expected lines e=0 then e=1 for the same individual")),
        }
    }
    if let Some((no, ..)) = pending {
        return Err(parse_err(no, "individual has only one haplotype line"));
    }
    Ok(out)
}

pub fn result_records(result: &PhasingResult) -> Vec<HaplotypeRecord> {
    result
        .individuals
        .iter()
        .map(|p| HaplotypeRecord {
            id: p.id.clone(),
            population: result.population_names[p.population].clone(),
            haplotypes: p.haplotypes.clone(),
        })
        .collect()
}

pub fn truth_records(truth: &GroundTruth) -> Vec<HaplotypeRecord> {
    truth
        .ids
        .iter()
        .zip(&truth.population_of)
        .zip(&truth.haplotypes)
        .map(|((id, &j), pair)| HaplotypeRecord {
            id: id.clone(),
            population: truth.population_names[j].clone(),
            haplotypes: pair.clone(),
        })
        .collect()
}

/// CSV with columns `pattern,theta,presence,share_set,freq_<population>...`.
/// The share set lists population names separated by `;`.
pub fn write_founder_report(result: &PhasingResult) -> String {
    let mut out = String::from("pattern,theta,presence,share_set");
    for name in &result.population_names {
        write!(out, ",freq_{name}").unwrap();
    }
    out.push('\n');
    for f in &result.founders {
        let share: Vec<&str> = f.share_set.iter().map(|&j| result.population_names[j].as_str()).collect();
        write!(out, "{},{:.6},{:.4},{}", f.pattern, f.theta, f.presence, share.join(";")).unwrap();
        for x in &f.population_freq {
            write!(out, ",{x:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// CSV with columns `pattern,populations`: the true founders of a simulation.
pub fn write_truth_founders(truth: &GroundTruth) -> String {
    let mut out = String::from("pattern,populations\n");
    for f in &truth.founders {
        let pops: Vec<&str> = f.populations.iter().map(|&j| truth.population_names[j].as_str()).collect();
        writeln!(out, "{},{}", f.pattern, pops.join(";")).unwrap();
    }
    out
}

/// Flat `key = value` lines; `#` starts a comment. Later keys override
/// earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(i + 1, format!("expected key = value, got {line:?}")))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(parse_err(i + 1, format!("bad key {k:?}")));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn write_key_values(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "#loci 4\nA1 popA 0 1 2 ?\nA2 popA 1 1 0 0\nB1 popB 2 ? 1 0\n";

    #[test]
    fn parses_sample() {
        let d = parse_dataset(SAMPLE).unwrap();
        assert_eq!(d.n_loci, 4);
        assert_eq!(d.n_populations(), 2);
        assert_eq!(d.populations[0].individuals[0].genotype.0[1], GenotypeSite::Pair(0, 1));
        assert_eq!(d.populations[1].individuals[0].genotype.0[1], GenotypeSite::Missing);
        assert_eq!(write_dataset(&d), SAMPLE);
    }

    #[test]
    fn general_alphabet_round_trip() {
        let text = "#loci 2\n#alleles 4\nx p 0/3 ?\ny p 2/2 1/3\n";
        let d = parse_dataset(text).unwrap();
        assert_eq!(d.alphabet.size(), 4);
        assert_eq!(d.populations[0].individuals[0].genotype.0[0], GenotypeSite::Pair(0, 3));
        assert_eq!(write_dataset(&d), text);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let line_of = |text: &str| match parse_dataset(text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        };
        assert_eq!(line_of("#loci 2\na p 0 1\nb p 0 3\n"), 3);
        assert_eq!(line_of("#loci 2\na p 0\n"), 2);
        assert_eq!(line_of("loci 2\n"), 1);
        assert_eq!(line_of("#loci 2\n#alleles 3\na p 1 1\n"), 3);
        assert_eq!(line_of("#loci 1\n#alleles 2\na p 0/2\n"), 3);
    }

    #[test]
    fn haplotype_file_round_trip() {
        let recs = vec![HaplotypeRecord {
            id: "i1".into(),
            population: "P".into(),
            haplotypes: [Haplotype::from_digits("0101").unwrap(), Haplotype::from_digits("1100").unwrap()],
        }];
        let text = write_haplotypes(&recs);
        assert_eq!(text, "i1 P 0 0101\ni1 P 1 1100\n");
        assert_eq!(parse_haplotypes(&text).unwrap(), recs);
        assert!(parse_haplotypes("i1 P 0 01\n").is_err());
        assert!(parse_haplotypes("i1 P 1 01\ni1 P 0 01\n").is_err());
    }

    #[test]
    fn key_values() {
        let m = parse_key_values("# comment\nseed = 7\nmodel=hdp # trailing\n\nseed = 8\n").unwrap();
        assert_eq!(m["seed"], "8");
        assert_eq!(m["model"], "hdp");
        assert!(parse_key_values("novalue\n").is_err());
        assert_eq!(write_key_values(&m), "model = hdp\nseed = 8\n");
    }

    fn dataset_strategy() -> impl Strategy<Value = Dataset> {
        (1usize..6, prop_oneof![Just(2u8), 3u8..=10]).prop_flat_map(|(n_loci, a)| {
            let site = prop_oneof![
                1 => Just(GenotypeSite::Missing),
                6 => (0..a, 0..a).prop_map(|(x, y)| GenotypeSite::Pair(x.min(y), x.max(y))),
            ];
            let ind = prop::collection::vec(site, n_loci);
            let pop = prop::collection::vec(ind, 1..4);
            prop::collection::vec(pop, 1..4).prop_map(move |pops| Dataset {
                alphabet: AlleleAlphabet::new(a).unwrap(),
                n_loci,
                populations: pops
                    .into_iter()
                    .enumerate()
                    .map(|(j, inds)| Population {
                        name: format!("pop{j}"),
                        individuals: inds
                            .into_iter()
                            .enumerate()
                            .map(|(i, sites)| Individual {
                                id: format!("p{j}i{i}"),
                                genotype: Genotype(sites),
                            })
                            .collect(),
                    })
                    .collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn dataset_text_round_trips(d in dataset_strategy()) {
            let text = write_dataset(&d);
            let back = parse_dataset(&text).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(write_dataset(&back), text);
        }
    }
}
