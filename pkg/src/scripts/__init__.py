# Scripts