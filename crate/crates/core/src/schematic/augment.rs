use super::{
    parse_pstxnet, trace_connectivity, AugmentationStrategy, Net, Schematic, SchematicError,
    SidecarKind, SourceFormat,
};

/// Populates every page's nets, recording the strategy used per page.
///
/// DE-HDL designs take their nets from the `pstxnet` sidecar, split per page
/// by component membership. Other formats keep embedded nets when a page has
/// them and otherwise fall back to wire tracing. Pages that already carry a
/// strategy are left untouched, so augmentation is idempotent.
pub fn augment_netlist(s: &Schematic) -> Result<Schematic, SchematicError> {
    let mut out = s.clone();
    if out.pages.iter().all(|p| p.strategy.is_some()) {
        return Ok(out);
    }
    match out.format {
        SourceFormat::DeHdl => {
            let text = out
                .sidecars
                .get(&SidecarKind::Pstxnet)
                .ok_or(SchematicError::MissingSidecar)?;
            let nets = parse_pstxnet(text)?;
            for net in &nets {
                for node in &net.nodes {
                    let found = out.pages.iter().any(|p| {
                        p.component(&node.designator)
                            .is_some_and(|c| c.pin(&node.pin).is_some())
                    });
                    if !found {
                        return Err(SchematicError::UnresolvedNode {
                            net: net.name.clone(),
                            designator: node.designator.clone(),
                            pin: node.pin.clone(),
                        });
                    }
                }
            }
            for page in out.pages.iter_mut().filter(|p| p.strategy.is_none()) {
                page.nets = nets
                    .iter()
                    .filter_map(|net| {
                        let nodes: Vec<_> = net
                            .nodes
                            .iter()
                            .filter(|n| page.component(&n.designator).is_some())
                            .cloned()
                            .collect();
                        (!nodes.is_empty()).then(|| Net::new(net.name.clone(), nodes))
                    })
                    .collect();
                page.strategy = Some(AugmentationStrategy::PstxnetSidecar);
            }
        }
        SourceFormat::StructuredPages | SourceFormat::KicadSubset => {
            for page in out.pages.iter_mut().filter(|p| p.strategy.is_none()) {
                if !page.nets.is_empty() {
                    page.strategy = Some(AugmentationStrategy::EmbeddedNets);
                    continue;
                }
                let traced = trace_connectivity(page);
                if !traced.dangling.is_empty() {
                    return Err(SchematicError::InferenceFailed {
                        page: page.id.clone(),
                        points: traced.dangling,
                    });
                }
                page.nets = traced.nets;
                page.strategy = Some(AugmentationStrategy::WireTraceInference);
            }
        }
    }
    Ok(out)
}
