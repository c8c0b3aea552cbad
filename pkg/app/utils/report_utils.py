from app.models import SliceSummary


def format_millimetres(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.6f} mm"


def format_report_text(summary: SliceSummary) -> str:
    report = summary.report
    lines = [
        "Slicing report",
        f"input: {summary.input_path}",
        f"mesh: {summary.triangles} triangles, {summary.vertices} vertices ({summary.dropped_triangles} degenerate dropped)",
        f"non-planar patches: {report.patches}",
        f"planar layers: {report.planar_layers}",
        f"non-planar layers: {report.nonplanar_layers}",
        f"toolpaths: {summary.toolpaths}",
        f"chamfer distance, planar: {format_millimetres(report.cd_planar_mm)}",
        f"chamfer distance, non-planar: {format_millimetres(report.cd_nonplanar_mm)}",
    ]
    if summary.comparison_region is not None:
        x0, y0, x1, y1 = summary.comparison_region
        lines.append(f"comparison region: x [{x0:.3f}, {x1:.3f}], y [{y0:.3f}, {y1:.3f}]")
    if report.cd_planar_mm and report.cd_nonplanar_mm:
        lines.append(f"planar / non-planar ratio: {report.cd_planar_mm / report.cd_nonplanar_mm:.2f}")
    lines.append(f"warnings: {len(report.warnings)}")
    lines.extend(f"  - {warning}" for warning in report.warnings)
    return "\n".join(lines) + "\n"


def format_summary_line(summary: SliceSummary) -> str:
    """One-line result used by the CLI and the MCP tools."""
    report = summary.report
    text = (
        f"{summary.toolpaths} toolpaths ({report.planar_layers} planar layers, "
        f"{report.nonplanar_layers} non-planar layers over {report.patches} patches) written to {summary.output_dir}"
    )
    if report.cd_planar_mm is not None and report.cd_nonplanar_mm is not None:
        text += f"; CD planar {report.cd_planar_mm:.4f} mm, non-planar {report.cd_nonplanar_mm:.4f} mm"
    if report.warnings:
        text += f"; {len(report.warnings)} warnings"
    return text
