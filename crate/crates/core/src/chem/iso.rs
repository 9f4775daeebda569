use super::{BondOrder, MolecularGraph};

/// Exact isomorphism test by backtracking over atom mappings that preserve
/// elements, degrees and bond orders.
pub fn is_isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    let n = a.atom_count();
    if n != b.atom_count() || a.bond_count() != b.bond_count() {
        return false;
    }
    let mut za: Vec<u8> = a.atoms().iter().map(|x| x.atomic_number()).collect();
    let mut zb: Vec<u8> = b.atoms().iter().map(|x| x.atomic_number()).collect();
    za.sort_unstable();
    zb.sort_unstable();
    if za != zb {
        return false;
    }
    let adj_a = matrix(a);
    let adj_b = matrix(b);
    let deg_a: Vec<usize> = adj_a.iter().map(|r| r.iter().flatten().count()).collect();
    let deg_b: Vec<usize> = adj_b.iter().map(|r| r.iter().flatten().count()).collect();

    // map atoms of `a` in BFS order so each new atom tends to touch mapped ones
    let order = bfs_order(a);
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend(0, &order, a, b, &adj_a, &adj_b, &deg_a, &deg_b, &mut map, &mut used)
}

fn matrix(g: &MolecularGraph) -> Vec<Vec<Option<BondOrder>>> {
    let n = g.atom_count();
    let mut m = vec![vec![None; n]; n];
    for bond in g.bonds() {
        m[bond.left][bond.right] = Some(bond.order);
        m[bond.right][bond.left] = Some(bond.order);
    }
    m
}

fn bfs_order(g: &MolecularGraph) -> Vec<usize> {
    let adj = g.adjacency();
    let n = g.atom_count();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(w, _) in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order
}

#[allow(clippy::too_many_arguments)]
fn extend(
    depth: usize,
    order: &[usize],
    a: &MolecularGraph,
    b: &MolecularGraph,
    adj_a: &[Vec<Option<BondOrder>>],
    adj_b: &[Vec<Option<BondOrder>>],
    deg_a: &[usize],
    deg_b: &[usize],
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let u = order[depth];
    for v in 0..b.atom_count() {
        if used[v] || a.atoms()[u] != b.atoms()[v] || deg_a[u] != deg_b[v] {
            continue;
        }
        let consistent = order[..depth]
            .iter()
            .all(|&p| adj_a[u][p] == adj_b[v][map[p]]);
        if !consistent {
            continue;
        }
        map[u] = v;
        used[v] = true;
        if extend(depth + 1, order, a, b, adj_a, adj_b, deg_a, deg_b, map, used) {
            return true;
        }
        used[v] = false;
        map[u] = usize::MAX;
    }
    false
}
