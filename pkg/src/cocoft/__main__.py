from cocoft.cli import run

run()
