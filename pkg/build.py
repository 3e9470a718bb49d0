import PyInstaller.__main__
import os

configs_dir = os.path.join(os.path.dirname(__file__), "configs")

PyInstaller.__main__.run([
    "--name=eksim",
    "--noconfirm",
    f"--add-data={configs_dir}{os.pathsep}configs",
    os.path.join(os.path.dirname(__file__), "./eksim/cli.py")
])
