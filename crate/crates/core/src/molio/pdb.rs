use super::{parse_coord, Chain, Element, ParseError, ProteinAtom, RawProtein, Residue};

/// Parses fixed-column ATOM records of the first model.
///
/// HETATM and every other record type are skipped, as are alternate locations
/// other than blank or `A`. Reading stops at the first ENDMDL.
pub fn parse_pdb_subset(text: &str) -> Result<RawProtein, ParseError> {
    let mut protein = RawProtein::default();
    let mut current: Option<(char, i32, char)> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let record = line.get(0..6).unwrap_or(line).trim_end();
        if record == "ENDMDL" {
            break;
        }
        if record != "ATOM" {
            continue;
        }
        let field = |a: usize, b: usize| -> Result<&str, ParseError> {
            line.get(a..b)
                .ok_or_else(|| ParseError::at(lineno, format!("ATOM record shorter than column {b}")))
        };
        let alt = field(16, 17)?.chars().next().unwrap_or(' ');
        if alt != ' ' && alt != 'A' {
            continue;
        }
        let name = field(12, 16)?.trim().to_string();
        if name.is_empty() {
            return Err(ParseError::at(lineno, "blank atom name"));
        }
        let res_name = field(17, 20)?.trim().to_string();
        let chain = field(21, 22)?.chars().next().unwrap_or(' ');
        let seq_field = field(22, 26)?;
        let seq: i32 = seq_field
            .trim()
            .parse()
            .map_err(|_| ParseError::at(lineno, format!("invalid residue number {:?}", seq_field.trim())))?;
        let insertion = field(26, 27)?.chars().next().unwrap_or(' ');
        let x = parse_coord(field(30, 38)?, lineno, "x")?;
        let y = parse_coord(field(38, 46)?, lineno, "y")?;
        let z = parse_coord(field(46, 54)?, lineno, "z")?;
        let element = element_of(line, &name)
            .ok_or_else(|| ParseError::at(lineno, format!("cannot identify element of atom {name:?}")))?;

        let key = (chain, seq, insertion);
        if current != Some(key) {
            current = Some(key);
            let ci = match protein.chains.iter().position(|c| c.id == chain) {
                Some(ci) => ci,
                None => {
                    protein.chains.push(Chain { id: chain, residues: Vec::new() });
                    protein.chains.len() - 1
                }
            };
            protein.chains[ci].residues.push(Residue { name: res_name, seq, insertion, atoms: Vec::new() });
        }
        let residue = protein
            .chains
            .iter_mut()
            .find(|c| c.id == chain)
            .and_then(|c| c.residues.last_mut())
            .expect("residue opened above");
        if residue.atoms.iter().any(|a| a.name == name) {
            return Err(ParseError::at(lineno, format!("duplicate atom name {name:?} in residue {seq}")));
        }
        residue.atoms.push(ProteinAtom { name, element, coords: [x, y, z] });
    }
    Ok(protein)
}

/// Columns 77–78 when present, else the first alphabetic character of the atom name.
fn element_of(line: &str, name: &str) -> Option<Element> {
    if let Some(sym) = line.get(76..78).map(str::trim).filter(|s| !s.is_empty()) {
        return Element::from_symbol(sym);
    }
    let first = name.chars().find(|c| c.is_ascii_alphabetic())?;
    Element::from_symbol(&first.to_string())
}
